"""Monte Carlo cost bounds from the singular-control interpretation.

The solved field u(x) is the infimum over admissible controls of the
expected running-plus-push cost until the state exits the domain, so any
concrete feedback policy yields an upper bound: simulated cost means (minus
a few standard errors and discretization slack) must not fall below u(x0).
That one-sided inequality is the oracle check.

States follow dX = s(X, alpha(X)) dW between pushes (Euler-Maruyama). When
the state enters the push rule's trigger region, it is projected along the
push direction by the smallest displacement leaving the region, paying the
support function of the generating convex body per unit displacement; this
is the instantaneous limit of bounded-rate pushing. Exits are detected by
clamping the step segment to the box and charging the boundary data there.

Randomness is counter-based: paths are processed in fixed blocks, each
driven by a Philox stream spawned from the master seed, so results are
bit-identical for a given seed and config regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridFn, interior_gradient
from .solver import Problem

__all__ = [
    "InvalidStart",
    "IncompatibleConstraint",
    "SimConfig",
    "PushRule",
    "Policy",
    "MCSample",
    "DppProbe",
    "simulate_cost",
    "dpp_probe",
    "policy_from_solution",
]

_BLOCK = 16384


class InvalidStart(Exception):
    pass


class IncompatibleConstraint(Exception):
    """The policy's constraint has no generating body, so the push cost
    (the support function) is unavailable."""


@dataclass(frozen=True)
class SimConfig:
    dt: float
    paths: int
    max_steps: int = 200000
    seed: int = 0

    def __post_init__(self):
        if not self.dt > 0 or self.paths < 1 or self.max_steps < 1:
            raise ValueError("need dt > 0, paths >= 1, max_steps >= 1")


@dataclass
class PushRule:
    constraint: object
    rho: object      # points (m, n) -> unit directions (m, n)
    trigger: object  # points (m, n) -> bool (m,), False outside the domain


@dataclass
class Policy:
    alpha: object    # points (m, n) -> branch indices (m,)
    push: PushRule | None = None
    value_fn: GridFn | None = None


@dataclass
class MCSample:
    mean: float
    std_error: float
    truncated_fraction: float
    paths: int


@dataclass
class DppProbe:
    lhs: float        # u(x0)
    rhs: MCSample     # policy cost up to the horizon plus u at the stopped state


# ---------------------------------------------------------------------------


class ConstantBranch:
    def __init__(self, k: int = 0):
        self.k = k

    def __call__(self, pts):
        return np.full(np.atleast_2d(pts).shape[0], self.k, dtype=int)


class NearestGridBranch:
    """Feedback drift control: the operator branch active at the nearest grid point."""

    def __init__(self, grid: Grid, branch: np.ndarray):
        self.grid = grid
        self.branch = branch.reshape(grid.shape)

    def __call__(self, pts):
        pts = np.atleast_2d(pts)
        idx = []
        for i in range(self.grid.n):
            j = np.rint((pts[:, i] - self.grid.lo[i]) / self.grid.h[i]).astype(int)
            idx.append(np.clip(j, 0, self.grid.shape[i] - 1))
        return self.branch[tuple(idx)]


class GradientField:
    """Interpolated discrete gradient of a solved field (edge-padded to the boundary)."""

    def __init__(self, u: GridFn):
        self.grid = u.grid
        g = u.grid
        P = interior_gradient(u)
        self.components = []
        inner = tuple(m - 2 for m in g.shape)
        for i in range(g.n):
            full = np.zeros(g.shape)
            if g.n == 1:
                full[1:-1] = P[:, i]
                full[0], full[-1] = full[1], full[-2]
            else:
                full[1:-1, 1:-1] = P[:, i].reshape(inner)
                full[0, :], full[-1, :] = full[1, :], full[-2, :]
                full[:, 0], full[:, -1] = full[:, 1], full[:, -2]
            self.components.append(GridFn(g, full))

    def __call__(self, pts):
        pts = np.atleast_2d(pts)
        return np.column_stack([c.interp(pts) for c in self.components])


class PushDirection:
    """rho(x) = DH(Du(x)) normalized; the lexicographically smallest unit
    vector where the gradient of H vanishes."""

    def __init__(self, grad_field: GradientField, constraint):
        self.grad_field = grad_field
        self.constraint = constraint

    def __call__(self, pts):
        dh = self.constraint.grad(self.grad_field(pts))
        dh = np.atleast_2d(dh)
        nrm = np.linalg.norm(dh, axis=1)
        out = np.zeros_like(dh)
        nz = nrm > 0
        out[nz] = dh[nz] / nrm[nz, None]
        if np.any(~nz):
            out[~nz, 0] = -1.0
        return out


class ActiveTrigger:
    """x is in the trigger region when H(Du(x)) >= -tol and x is strictly inside."""

    def __init__(self, grad_field: GradientField, constraint, tol: float):
        self.grad_field = grad_field
        self.constraint = constraint
        self.tol = tol

    def __call__(self, pts):
        pts = np.atleast_2d(pts)
        g = self.grad_field.grid
        inside = np.ones(pts.shape[0], dtype=bool)
        for i in range(g.n):
            inside &= (pts[:, i] > g.lo[i]) & (pts[:, i] < g.hi[i])
        H = np.atleast_1d(self.constraint.value(self.grad_field(pts)))
        return inside & (H >= -self.tol)


def policy_from_solution(p: Problem, u: GridFn, active_tol: float) -> Policy:
    """Feedback policy read off a solved field: argmax branch drift, push
    direction DH(Du) normalized, trigger region the active set."""
    from .grid import interior_hessian

    g = p.grid
    M = interior_hessian(u)
    tables = p.op.coefficients(g.interior_points())
    if tables.shape[-1] == 1:
        branch_vals = -(tables[..., 0] * M[None, :, 0])
    else:
        branch_vals = -(tables[..., 0] * M[None, :, 0]
                        + 2.0 * tables[..., 1] * M[None, :, 1]
                        + tables[..., 2] * M[None, :, 2])
    kst = np.argmax(branch_vals, axis=0)
    full = np.zeros(g.shape, dtype=int)
    if g.n == 1:
        full[1:-1] = kst
        full[0], full[-1] = full[1], full[-2]
    else:
        inner = tuple(m - 2 for m in g.shape)
        full[1:-1, 1:-1] = kst.reshape(inner)
        full[0, :], full[-1, :] = full[1, :], full[-2, :]
        full[:, 0], full[:, -1] = full[:, 1], full[:, -2]
    gf = GradientField(u)
    rule = PushRule(p.constraint, PushDirection(gf, p.constraint),
                    ActiveTrigger(gf, p.constraint, active_tol))
    return Policy(NearestGridBranch(g, full), rule, value_fn=u)


# ---------------------------------------------------------------------------
# simulation engine


def _strictly_inside(g: Grid, pts: np.ndarray) -> np.ndarray:
    ok = np.ones(pts.shape[0], dtype=bool)
    for i in range(g.n):
        ok &= (pts[:, i] > g.lo[i]) & (pts[:, i] < g.hi[i])
    return ok


def _clamp_to_exit(g: Grid, x_old: np.ndarray, x_new: np.ndarray) -> np.ndarray:
    """First intersection of the step segment with the box boundary."""
    t = np.ones(x_old.shape[0])
    for i in range(g.n):
        d = x_new[:, i] - x_old[:, i]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_hi = np.where(x_new[:, i] >= g.hi[i], (g.hi[i] - x_old[:, i]) / d, np.inf)
            t_lo = np.where(x_new[:, i] <= g.lo[i], (g.lo[i] - x_old[:, i]) / d, np.inf)
        t = np.minimum(t, np.minimum(np.nan_to_num(t_hi, nan=np.inf),
                                     np.nan_to_num(t_lo, nan=np.inf)))
    t = np.clip(t, 0.0, 1.0)
    out = x_old + t[:, None] * (x_new - x_old)
    for i in range(g.n):
        out[:, i] = np.clip(out[:, i], g.lo[i], g.hi[i])
    return out


def _push(g: Grid, rule: PushRule, X: np.ndarray):
    """Project along -rho by the smallest displacement leaving the trigger
    region (capped at the domain wall). Returns new points, displacement,
    and the unit directions used."""
    rho = rule.rho(X)
    d = -rho
    t_box = np.full(X.shape[0], np.inf)
    for i in range(g.n):
        di = d[:, i]
        with np.errstate(divide="ignore"):
            t_pos = np.where(di > 0, (g.hi[i] - X[:, i]) / di,
                             np.where(di < 0, (g.lo[i] - X[:, i]) / di, np.inf))
        t_box = np.minimum(t_box, t_pos)
    t_box = np.maximum(t_box, 0.0)
    step0 = 0.5 * min(g.h)
    lo = np.zeros(X.shape[0])
    hi = np.minimum(step0, t_box)
    for _ in range(80):
        probe = X + hi[:, None] * d
        still_in = rule.trigger(probe) & (hi < t_box * (1 - 1e-14))
        if not np.any(still_in):
            break
        lo = np.where(still_in, hi, lo)
        hi = np.where(still_in, np.minimum(2 * hi, t_box), hi)
    blo, bhi = lo, hi
    for _ in range(50):
        mid = 0.5 * (blo + bhi)
        inside = rule.trigger(X + mid[:, None] * d)
        blo = np.where(inside, mid, blo)
        bhi = np.where(inside, bhi, mid)
    # pushes that stay triggered all the way to the wall exit the domain there
    delta = np.where(bhi >= t_box * (1 - 1e-9), t_box, bhi)
    return X + delta[:, None] * d, delta, rho


def _cost_support(rule: PushRule, rho: np.ndarray) -> np.ndarray:
    ell = rule.constraint.cost_support(rho)
    if ell is None:
        raise IncompatibleConstraint(
            "push cost needs a support-derived constraint (or a ball-type analytic one)")
    return np.atleast_1d(ell)


def _simulate(p: Problem, pol: Policy, x0, cfg: SimConfig,
              horizon_steps: int | None = None, value_fn: GridFn | None = None):
    g = p.grid
    x0 = np.asarray(x0, dtype=float).reshape(g.n)
    if not _strictly_inside(g, x0[None, :])[0]:
        raise InvalidStart(f"start point {x0.tolist()} is not interior to the domain")
    if pol.push is not None:
        _cost_support(pol.push, np.eye(g.n)[:1])  # fail fast if the cost is unavailable
    sqdt = math.sqrt(cfg.dt)
    n_blocks = (cfg.paths + _BLOCK - 1) // _BLOCK
    streams = np.random.SeedSequence(cfg.seed).spawn(n_blocks)
    costs = np.zeros(cfg.paths)
    truncated = np.zeros(cfg.paths, dtype=bool)
    limit = cfg.max_steps if horizon_steps is None else min(horizon_steps, cfg.max_steps)
    for b, child in enumerate(streams):
        rng = np.random.Generator(np.random.Philox(child))
        beg, end = b * _BLOCK, min((b + 1) * _BLOCK, cfg.paths)
        nb = end - beg
        X = np.tile(x0, (nb, 1))
        cost = np.zeros(nb)
        alive = np.arange(nb)
        if pol.push is not None and limit > 0:
            alive = _maybe_push(g, p, pol, X, cost, alive)
        for _ in range(limit):
            if alive.size == 0:
                break
            xc = X[alive]
            cost[alive] += np.asarray(p.f(xc)) * cfg.dt
            sig = p.op.noise_matrix(xc, pol.alpha(xc))
            dw = rng.normal(size=(alive.size, g.n)) * sqdt
            xn = xc + np.einsum("pij,pj->pi", sig, dw)
            inside = _strictly_inside(g, xn)
            if np.any(~inside):
                exit_pts = _clamp_to_exit(g, xc[~inside], xn[~inside])
                cost[alive[~inside]] += np.asarray(p.phi(exit_pts))
                X[alive[inside]] = xn[inside]
                alive = alive[inside]
            else:
                X[alive] = xn
            if pol.push is not None and alive.size:
                alive = _maybe_push(g, p, pol, X, cost, alive)
        if alive.size:
            if horizon_steps is not None and value_fn is not None:
                cost[alive] += value_fn.interp(X[alive])
            else:
                truncated[beg + alive] = True
        costs[beg:end] = cost
    return costs, truncated


def _maybe_push(g, p, pol, X, cost, alive):
    trig = pol.push.trigger(X[alive])
    if not np.any(trig):
        return alive
    idx = alive[trig]
    newX, delta, rho = _push(g, pol.push, X[idx])
    cost[idx] += _cost_support(pol.push, rho) * delta
    inside = _strictly_inside(g, newX)
    if np.any(~inside):
        exit_pts = newX[~inside].copy()
        for i in range(g.n):
            exit_pts[:, i] = np.clip(exit_pts[:, i], g.lo[i], g.hi[i])
        cost[idx[~inside]] += np.asarray(p.phi(exit_pts))
    X[idx] = newX
    keep = np.ones(alive.size, dtype=bool)
    keep[np.nonzero(trig)[0][~inside]] = False
    return alive[keep]


def _sample(costs: np.ndarray, truncated: np.ndarray) -> MCSample:
    n = costs.size
    se = float(np.std(costs, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MCSample(float(np.mean(costs)), se, float(truncated.mean()), n)


def simulate_cost(p: Problem, pol: Policy, x0, cfg: SimConfig) -> MCSample:
    """Expected cost of the policy from x0: running cost f dt, push cost
    l(rho) d(xi), boundary data at the exit point. Means are deterministic
    for a fixed seed and config."""
    costs, truncated = _simulate(p, pol, x0, cfg)
    return _sample(costs, truncated)


def dpp_probe(p: Problem, pol: Policy, u: GridFn, x0, horizon: float, cfg: SimConfig) -> DppProbe:
    """Both sides of the dynamic programming identity truncated at the horizon.

    lhs is u(x0); rhs accrues policy cost until exit or the horizon and adds
    the interpolated u at the stopped state. For near-optimal policies the
    rhs approaches the lhs from above.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    lhs = float(u.interp(np.asarray(x0, dtype=float).reshape(1, p.grid.n))[0])
    steps = int(round(horizon / cfg.dt))
    if steps == 0:
        return DppProbe(lhs, MCSample(lhs, 0.0, 0.0, cfg.paths))
    costs, truncated = _simulate(p, pol, x0, cfg, horizon_steps=steps, value_fn=u)
    return DppProbe(lhs, _sample(costs, truncated))
