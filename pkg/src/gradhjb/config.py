"""Config-file parsing into runnable problem descriptions.

The format is flat INI (key = value under [sections]); coefficient entries
are polynomial expressions in x1, x2 (plus z for diffusion controls), see
polys. Parse failures and the well-posedness gate raise ConfigError with a
[section] key anchor; pass override_wellposedness=True (CLI flag
--override-wellposedness) to accept a problem outside the gate.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import constraint as con
from .grid import Grid
from .operator import bellman_operator, diffusion_sup_operator, linear_operator
from .polys import Poly, PolyMatrix, PolyParseError, PolySigma
from .solver import Problem, WellPosednessError, default_newton_tol

__all__ = ["ConfigError", "RunConfig", "McSettings", "load_config"]


class ConfigError(Exception):
    pass


@dataclass
class McSettings:
    paths: int = 100000
    dt: float = 1e-4
    max_steps: int = 200000
    seed: int = 20240901
    x0: list = field(default_factory=list)
    slack: float = 0.02


@dataclass
class RunConfig:
    name: str
    dim: int
    bounds: tuple          # ((lo1, hi1), [ (lo2, hi2) ])
    points: tuple          # per-axis counts
    operator_spec: dict
    constraint_spec: dict
    f: Poly
    phi: Poly
    schedule: list
    family: str
    newton_tol: float | None
    max_iters: int
    active_tol: float | None
    margins: list
    growth_factor: float
    refinements: list
    mc: McSettings
    override_wellposedness: bool = False

    def grid_for(self, points=None) -> Grid:
        pts = tuple(points) if points is not None else self.points
        if len(pts) == 1 and self.dim == 2:
            pts = (pts[0], pts[0])
        if self.dim == 1:
            return Grid.line(self.bounds[0][0], self.bounds[0][1], pts[0])
        return Grid.box((self.bounds[0][0], self.bounds[1][0]),
                        (self.bounds[0][1], self.bounds[1][1]), pts)

    def problem_for(self, points=None) -> Problem:
        g = self.grid_for(points)
        op = _build_operator(self.operator_spec, self.dim, g)
        c = _build_constraint(self.constraint_spec)
        try:
            return Problem(op, c, self.f, self.phi, g, name=self.name,
                           allow_unverified_wellposedness=self.override_wellposedness)
        except WellPosednessError as exc:
            raise ConfigError(f"[problem] well-posedness gate: {exc}") from exc

    @property
    def eps_final(self) -> float:
        return self.schedule[-1]

    def resolved_active_tol(self) -> float:
        return self.active_tol if self.active_tol is not None else 10.0 * self.eps_final

    def resolved_newton_tol(self) -> float:
        return self.newton_tol if self.newton_tol is not None else default_newton_tol(self.dim)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _rows(text: str) -> list[list[float]]:
    return [[float(v) for v in row.split(",") if v.strip()]
            for row in text.split(";") if row.strip()]


class _Section:
    """Anchored access to one config section."""

    def __init__(self, parser, name, path):
        self.name = name
        self.path = path
        self.data = dict(parser[name]) if parser.has_section(name) else None

    def require(self):
        if self.data is None:
            raise ConfigError(f"{self.path}: missing section [{self.name}]")
        return self

    def __contains__(self, key):
        return self.data is not None and key in self.data

    def get(self, key, default=None, required=False):
        if self.data is None or key not in self.data:
            if required:
                raise ConfigError(f"[{self.name}] {key}: required key missing")
            return default
        return self.data[key]

    def parse(self, key, fn, default=None, required=False):
        raw = self.get(key, required=required)
        if raw is None:
            return default
        try:
            return fn(raw)
        except (ValueError, PolyParseError) as exc:
            raise ConfigError(f"[{self.name}] {key}: {exc}") from exc


def _poly(variables):
    return lambda raw: Poly.parse(raw, variables=variables)


def load_config(path, override_wellposedness: bool = False) -> RunConfig:
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    sec = lambda name: _Section(parser, name, path)
    sgrid = sec("grid").require()
    sop = sec("operator").require()
    scon = sec("constraint").require()
    sprob = sec("problem").require()
    ssch = sec("schedule").require()
    stol = sec("tolerances")
    sdiag = sec("diagnostics")
    smc = sec("mc")

    points = tuple(sgrid.parse("points", _ints, required=True))
    x1 = sgrid.parse("x1", _floats, required=True)
    x2 = sgrid.parse("x2", _floats)
    dim = sgrid.parse("dim", int, default=2 if x2 is not None else 1)
    if dim not in (1, 2):
        raise ConfigError("[grid] dim: must be 1 or 2")
    if dim == 2 and x2 is None:
        raise ConfigError("[grid] x2: required in dimension 2")
    if len(x1) != 2 or (x2 is not None and len(x2) != 2):
        raise ConfigError("[grid] axis bounds must be 'lo, hi'")
    if len(points) not in (1, 2):
        raise ConfigError("[grid] points: one count per axis")
    if dim == 2 and len(points) == 1:
        points = (points[0], points[0])
    bounds = (tuple(x1),) if dim == 1 else (tuple(x1), tuple(x2))

    xvars = ("x1",) if dim == 1 else ("x1", "x2")
    op_spec = _parse_operator(sop, dim, xvars)
    con_spec = _parse_constraint(scon, dim)

    fpoly = sprob.parse("f", _poly(xvars), required=True)
    phipoly = sprob.parse("phi", _poly(xvars), default=Poly.constant(0.0))
    name = sprob.get("name", default=path.stem)

    if "values" in ssch:
        schedule = ssch.parse("values", _floats, required=True)
    else:
        eps0 = ssch.parse("eps0", float, required=True)
        ratio = ssch.parse("ratio", float, required=True)
        count = ssch.parse("count", int, required=True)
        if not (eps0 > 0 and 0 < ratio < 1 and count >= 1):
            raise ConfigError("[schedule] need eps0 > 0, 0 < ratio < 1, count >= 1")
        schedule = [eps0 * ratio ** k for k in range(count)]
    family = ssch.get("family", default="poly_blend")
    if family not in ("poly_blend", "shifted_quadratic"):
        raise ConfigError(f"[schedule] family: unknown family {family!r}")

    mc = McSettings()
    if smc.data is not None:
        mc = McSettings(
            paths=smc.parse("paths", int, default=mc.paths),
            dt=smc.parse("dt", float, default=mc.dt),
            max_steps=smc.parse("max_steps", int, default=mc.max_steps),
            seed=smc.parse("seed", int, default=mc.seed),
            x0=smc.parse("x0", _rows, default=[]),
            slack=smc.parse("slack", float, default=mc.slack),
        )

    cfg = RunConfig(
        name=name,
        dim=dim,
        bounds=bounds,
        points=points,
        operator_spec=op_spec,
        constraint_spec=con_spec,
        f=fpoly,
        phi=phipoly,
        schedule=schedule,
        family=family,
        newton_tol=stol.parse("newton_tol", float),
        max_iters=stol.parse("max_iters", int, default=200),
        active_tol=stol.parse("active_tol", float),
        margins=sdiag.parse("margins", _floats, default=[0.1, 0.2]),
        growth_factor=sdiag.parse("growth_factor", float, default=2.0),
        refinements=sdiag.parse("refinements", _ints,
                                default=[101, 201, 401] if dim == 1 else [51, 101, 201]),
        mc=mc,
        override_wellposedness=override_wellposedness,
    )
    cfg.problem_for()  # fail early on inconsistent specs and the gate
    return cfg


def _parse_operator(sop: _Section, dim: int, xvars) -> dict:
    kind = sop.get("kind", required=True)
    spec = {"kind": kind}
    for key in ("lam", "Lam", "ups"):
        spec[key] = sop.parse(key, float)
    poly = _poly(xvars)
    if kind == "linear":
        spec["a"] = _parse_sym_entries(sop, "a", dim, poly)
    elif kind == "bellman_max":
        nb = sop.parse("branches", int, required=True)
        if nb < 1:
            raise ConfigError("[operator] branches: must be >= 1")
        spec["branches"] = [_parse_sym_entries(sop, f"a{k + 1}", dim, poly) for k in range(nb)]
    elif kind == "diffusion_sup":
        spec["controls"] = sop.parse("controls", _floats, required=True)
        zpoly = _poly(tuple(xvars) + ("z",))
        if dim == 1:
            spec["sigma"] = [[sop.parse("sigma", zpoly, required=True)]]
        else:
            spec["sigma"] = [[sop.parse("sigma11", zpoly, required=True),
                              sop.parse("sigma12", zpoly, default=Poly.constant(0.0))],
                             [sop.parse("sigma21", zpoly, default=Poly.constant(0.0)),
                              sop.parse("sigma22", zpoly, required=True)]]
    else:
        raise ConfigError(f"[operator] kind: unknown kind {kind!r}")
    return spec


def _parse_sym_entries(sop: _Section, prefix: str, dim: int, poly) -> PolyMatrix:
    if dim == 1:
        return PolyMatrix((sop.parse(prefix, poly, required=True),))
    return PolyMatrix((sop.parse(f"{prefix}_11" if prefix != "a" else "a11", poly, required=True),
                       sop.parse(f"{prefix}_12" if prefix != "a" else "a12", poly,
                                 default=Poly.constant(0.0)),
                       sop.parse(f"{prefix}_22" if prefix != "a" else "a22", poly, required=True)))


def _build_operator(spec: dict, dim: int, g: Grid):
    pts = g.points()
    kw = dict(n=dim, lam=spec.get("lam"), Lam=spec.get("Lam"), ups=spec.get("ups"),
              domain_points=pts)
    try:
        if spec["kind"] == "linear":
            return linear_operator(spec["a"], **kw)
        if spec["kind"] == "bellman_max":
            return bellman_operator(spec["branches"], **kw)
        return diffusion_sup_operator(PolySigma(spec["sigma"]), spec["controls"], **kw)
    except Exception as exc:
        raise ConfigError(f"[operator] {exc}") from exc


def _parse_constraint(scon: _Section, dim: int) -> dict:
    kind = scon.get("kind", required=True)
    spec = {"kind": kind, "surrogate": scon.get("surrogate", "false").lower() in ("1", "true", "yes")}
    if kind in ("ball_norm", "ball_norm_squared"):
        spec["radius"] = scon.parse("radius", float, required=True)
    elif kind == "ellipsoid_quadratic":
        spec["A"] = scon.parse("A", _rows, required=True)
        spec["c"] = scon.parse("c", float, required=True)
    elif kind == "from_support":
        body = scon.get("body", required=True)
        spec["body"] = body
        spec["sample_count"] = scon.parse("sample_count", int, default=256)
        if body == "ball":
            spec["radius"] = scon.parse("radius", float, required=True)
        elif body == "box":
            spec["halfwidths"] = scon.parse("halfwidths", _floats, required=True)
        elif body == "ellipsoid":
            spec["shape"] = scon.parse("shape", _rows, required=True)
        elif body == "polytope":
            spec["vertices"] = scon.parse("vertices", _rows, required=True)
        else:
            raise ConfigError(f"[constraint] body: unknown body {body!r}")
    else:
        raise ConfigError(f"[constraint] kind: unknown kind {kind!r}")
    return spec


def _build_constraint(spec: dict):
    try:
        if spec["kind"] == "ball_norm":
            c = con.BallNormConstraint(spec["radius"])
        elif spec["kind"] == "ball_norm_squared":
            c = con.BallNormSquaredConstraint(spec["radius"])
        elif spec["kind"] == "ellipsoid_quadratic":
            c = con.EllipsoidQuadraticConstraint(np.array(spec["A"]), spec["c"])
        else:
            body_kind = spec["body"]
            if body_kind == "ball":
                body = con.Ball(spec["radius"])
            elif body_kind == "box":
                body = con.Box(tuple(spec["halfwidths"]))
            elif body_kind == "ellipsoid":
                body = con.Ellipsoid(tuple(tuple(r) for r in spec["shape"]))
            else:
                body = con.Polytope(tuple(tuple(r) for r in spec["vertices"]))
            c = con.constraint_from_support(body, spec["sample_count"])
        if spec["surrogate"]:
            c = con.surrogate(c)
        return c
    except con.ConstraintError as exc:
        raise ConfigError(f"[constraint] {exc}") from exc
