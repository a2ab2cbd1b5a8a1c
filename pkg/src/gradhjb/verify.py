"""Post-solve diagnostics that turn qualitative solvability and regularity
statements into quantitative checks on a discrete solution.

The checks are read-only passes over grid functions: two-sided viscosity
residuals, constraint violation against the penalty tail inversion,
comparison ordering, and tables of gradient / penalty / Hessian-seminorm
bounds over interior margins swept across the continuation schedule. Bounds
are never asserted against absolute constants (none are available); what is
asserted is stability across the sweep, within a configurable growth factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, GridFn, interior_gradient, interior_hessian
from .operator import SymMat
from .penalty import penalty_family
from .solver import Problem, SolveReport, solve, solve_unconstrained

__all__ = [
    "ViscosityCheck",
    "viscosity_residual",
    "constraint_violation",
    "violation_bound",
    "ComparisonCheck",
    "comparison_check",
    "hessian_product_probe",
    "SweepRow",
    "GrowthVerdict",
    "DiagnosticReport",
    "uniform_bound_sweep",
    "run_verification",
    "check_penalty_axioms",
    "check_constraint_invariants",
    "check_support_properties",
    "check_elementary_inequality",
    "CheckOutcome",
]


# ---------------------------------------------------------------------------
# pointwise residual checks


@dataclass
class ViscosityCheck:
    tol: float
    sub_sup: float            # sup over interior of max{F - f, H}
    sub_worst: tuple
    super_violation: float    # sup of (f - F) where H is safely negative; -inf if vacuous
    super_worst: tuple | None
    passed_sub: bool
    passed_super: bool

    @property
    def residual_sup(self) -> float:
        vals = [self.sub_sup]
        if np.isfinite(self.super_violation):
            vals.append(self.super_violation)
        return max(vals)

    @property
    def passed(self) -> bool:
        return self.passed_sub and self.passed_super

    @property
    def worst_point(self):
        if not self.passed_super and self.super_worst is not None:
            return self.super_worst
        return self.sub_worst


def _interior_operator_values(u: GridFn, p: Problem):
    pts = u.grid.interior_points()
    M = interior_hessian(u)
    tables = p.op.coefficients(pts)
    if tables.shape[-1] == 1:
        branch_vals = -(tables[..., 0] * M[None, :, 0])
    else:
        branch_vals = -(tables[..., 0] * M[None, :, 0]
                        + 2.0 * tables[..., 1] * M[None, :, 1]
                        + tables[..., 2] * M[None, :, 2])
    F = branch_vals.max(axis=0)
    fvals = np.asarray(p.f(pts), dtype=float)
    H = p.constraint.value(interior_gradient(u))
    return pts, F, fvals, H


def viscosity_residual(u: GridFn, p: Problem, tol: float) -> ViscosityCheck:
    """Two-sided residual of max{F(D2u, x) - f, H(Du)} = 0 on the interior.

    Subsolution side: the max is <= tol everywhere. Supersolution side: the
    elliptic branch must vanish wherever the constraint branch is safely
    negative (H < -10 tol), so F - f >= -tol is required there.
    """
    pts, F, fvals, H = _interior_operator_values(u, p)
    r = np.maximum(F - fvals, H)
    i_sub = int(np.argmax(r))
    sub_sup = float(r[i_sub])
    clean = H < -10.0 * tol
    if np.any(clean):
        gap = fvals - F  # should stay <= tol on clean points
        gap = np.where(clean, gap, -np.inf)
        i_sup = int(np.argmax(gap))
        super_violation = float(gap[i_sup])
        super_worst = tuple(float(v) for v in pts[i_sup])
    else:
        super_violation = -math.inf
        super_worst = None
    return ViscosityCheck(
        tol=tol,
        sub_sup=sub_sup,
        sub_worst=tuple(float(v) for v in pts[i_sub]),
        super_violation=super_violation,
        super_worst=super_worst,
        passed_sub=sub_sup <= tol,
        passed_super=(not np.isfinite(super_violation)) or super_violation <= tol,
    )


def constraint_violation(u: GridFn, c, eps: float) -> float:
    """sup over interior points of H(Du)^+ ."""
    H = c.value(interior_gradient(u))
    return float(np.maximum(H, 0.0).max())


def violation_bound(penalty_sup: float, eps: float, h: float) -> float:
    """Admissible violation: tail inversion (C + 1) eps plus stencil slack 10 h^2."""
    return (penalty_sup + 1.0) * eps + 10.0 * h * h


@dataclass
class ComparisonCheck:
    passed: bool
    worst_gap: float  # max(u - v); <= ordering_tol when ordered
    ordering_tol: float


def comparison_check(u: GridFn, v: GridFn, ordering_tol: float = 1e-9) -> ComparisonCheck:
    """Assert u <= v + ordering_tol pointwise for certified sub/supersolutions."""
    gap = float((u.values - v.values).max())
    return ComparisonCheck(gap <= ordering_tol, gap, ordering_tol)


def hessian_product_probe(S, T, X) -> tuple[float, float]:
    """Returns (S . (X T X), lammin(S) lammin(T) |X|^2); left >= right for PSD S, T."""
    S = S.array if isinstance(S, SymMat) else np.asarray(S, dtype=float)
    T = T.array if isinstance(T, SymMat) else np.asarray(T, dtype=float)
    X = X.array if isinstance(X, SymMat) else np.asarray(X, dtype=float)
    lhs = float(np.trace(S @ X @ T @ X))
    s = float(np.linalg.eigvalsh(S).min())
    t = float(np.linalg.eigvalsh(T).min())
    rhs = s * t * float(np.sum(X * X))
    return lhs, rhs


# ---------------------------------------------------------------------------
# sweep tables


@dataclass
class SweepRow:
    margin: float
    eps: float
    sup_grad: float
    sup_beta: float
    seminorms: dict  # key "2" / "4" / "8" / "inf" -> value


@dataclass
class GrowthVerdict:
    margin: float
    column: str
    ratio: float
    passed: bool
    asserted: bool


@dataclass
class DiagnosticReport:
    problem_name: str = ""
    residual: ViscosityCheck | None = None
    constraint_sup: float | None = None
    constraint_bound: float | None = None
    constraint_passed: bool | None = None
    penalty_table: list = field(default_factory=list)      # (eps, global penalty sup)
    sweep_rows: list = field(default_factory=list)         # SweepRow
    growth: list = field(default_factory=list)             # GrowthVerdict
    comparisons: list = field(default_factory=list)        # (name, ComparisonCheck)
    structural: list = field(default_factory=list)         # (name, CheckOutcome)
    stages: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        ok = True
        if self.residual is not None:
            ok &= self.residual.passed
        if self.constraint_passed is not None:
            ok &= self.constraint_passed
        ok &= all(c.passed for _, c in self.comparisons)
        ok &= all(v.passed for v in self.growth if v.asserted)
        ok &= all(o.passed for _, o in self.structural)
        return ok

    def summary_lines(self):
        if self.residual is not None:
            r = self.residual
            yield (f"{'PASS' if r.passed else 'FAIL'} viscosity_residual "
                   f"sub_sup={r.sub_sup:.3e} super_violation={r.super_violation:.3e} "
                   f"tol={r.tol:.3e} worst={r.worst_point}")
        if self.constraint_passed is not None:
            yield (f"{'PASS' if self.constraint_passed else 'FAIL'} constraint_violation "
                   f"sup={self.constraint_sup:.3e} bound={self.constraint_bound:.3e}")
        for name, c in self.comparisons:
            yield f"{'PASS' if c.passed else 'FAIL'} comparison.{name} worst_gap={c.worst_gap:+.3e}"
        for v in self.growth:
            tag = "PASS" if v.passed else "FAIL"
            extra = "" if v.asserted else " (informational)"
            yield f"{tag} sweep_growth margin={v.margin:g} column={v.column} ratio={v.ratio:.3f}{extra}"
        for name, o in self.structural:
            yield f"{'PASS' if o.passed else 'FAIL'} {name} worst={o.worst:.3e}"

    def csv_rows(self):
        """Flat (table, key..., value) rows for the diagnostics CSV."""
        for eps, sup in self.penalty_table:
            yield ("penalty_sup", f"{eps:.17g}", "", f"{sup:.17g}")
        for row in self.sweep_rows:
            yield ("gradient_sup", f"{row.margin:.17g}", f"{row.eps:.17g}", f"{row.sup_grad:.17g}")
            yield ("penalty_sup_margin", f"{row.margin:.17g}", f"{row.eps:.17g}", f"{row.sup_beta:.17g}")
            for pname, val in row.seminorms.items():
                yield (f"hessian_seminorm_p{pname}", f"{row.margin:.17g}", f"{row.eps:.17g}", f"{val:.17g}")
        for v in self.growth:
            yield ("growth_ratio", f"{v.margin:.17g}", v.column, f"{v.ratio:.17g}")


def _margin_tables(rep: SolveReport, problem: Problem, margins, ps, family) -> list[SweepRow]:
    g = problem.grid
    cellvol = float(np.prod(g.h))
    fam = penalty_family(family) if isinstance(family, str) else family
    rows = []
    inner_shape = tuple(m - 2 for m in g.shape)
    for margin, stage, u in ((m, s, u) for m in margins
                             for s, u in zip(rep.stages, rep.stage_solutions)):
        mask = rep.u.grid.margin_mask(margin)
        sel = mask[(slice(1, -1),) * g.n].ravel()
        if not np.any(sel):
            raise ValueError(f"margin {margin} leaves no interior points")
        P = interior_gradient(u)[sel]
        Ment = interior_hessian(u)[sel]
        if Ment.shape[1] == 1:
            frob = np.abs(Ment[:, 0])
        else:
            frob = np.sqrt(Ment[:, 0] ** 2 + 2 * Ment[:, 1] ** 2 + Ment[:, 2] ** 2)
        H = problem.constraint.value(P)
        beta = fam(stage.eps).value(H)
        semis = {str(p): float((np.sum(frob ** p) * cellvol) ** (1.0 / p)) for p in ps}
        semis["inf"] = float(frob.max())
        rows.append(SweepRow(
            margin=margin, eps=stage.eps,
            sup_grad=float(np.linalg.norm(P, axis=1).max()),
            sup_beta=float(np.max(beta)),
            seminorms=semis,
        ))
    return rows


_GROWTH_FLOOR = 1e-8


def _growth_verdicts(rows, margins, ps, growth_factor, x_independent) -> list[GrowthVerdict]:
    verdicts = []
    columns = [("sup_grad", lambda r: r.sup_grad, True), ("sup_beta", lambda r: r.sup_beta, True)]
    columns += [(f"w2_{p}", (lambda p: lambda r: r.seminorms[str(p)])(p), True) for p in ps]
    columns.append(("w2_inf", lambda r: r.seminorms["inf"], x_independent))
    for margin in margins:
        sub = [r for r in rows if r.margin == margin]
        for name, get, asserted in columns:
            vals = np.array([get(r) for r in sub])
            clipped = np.maximum(vals, _GROWTH_FLOOR)
            ratio = float(clipped.max() / clipped.min())
            verdicts.append(GrowthVerdict(margin, name, ratio, ratio < growth_factor, asserted))
    return verdicts


def uniform_bound_sweep(p: Problem, schedule, margins, ps=(2, 4, 8),
                        growth_factor: float = 2.0, family: str = "poly_blend",
                        newton_tol: float | None = None, report: SolveReport | None = None) -> DiagnosticReport:
    """Solve across the schedule and tabulate interior bounds per margin.

    Columns: sup |Du|, sup b_eps(H(Du)), discrete Hessian L^p seminorms for
    p in ps, and the Hessian sup. A column FAILs when it varies by more than
    growth_factor across the schedule (values below 1e-8 are treated as
    zero). The Hessian-sup column is asserted only for x-independent
    operators; otherwise it is recorded as informational.
    """
    if report is None:
        report = solve(p, schedule, family=family, newton_tol=newton_tol, keep_stage_solutions=True)
    if report.stage_solutions is None:
        raise ValueError("need a SolveReport with keep_stage_solutions=True")
    margins = sorted(float(m) for m in margins)
    rows = _margin_tables(report, p, margins, ps, family)
    diag = DiagnosticReport(problem_name=p.name)
    diag.stages = report.stages
    diag.sweep_rows = rows
    diag.penalty_table = [(s.eps, s.penalty_sup) for s in report.stages]
    diag.growth = _growth_verdicts(rows, margins, ps, growth_factor, p.op.x_independent)
    return diag


# ---------------------------------------------------------------------------
# structural probe suites


@dataclass
class CheckOutcome:
    passed: bool
    worst: float
    detail: str = ""


def check_penalty_axioms(family: str | type, eps_values=(0.1, 0.01), samples: int = 4001) -> CheckOutcome:
    """Dense-sample the penalty axioms: zero left tail, positivity, monotone
    value and slope, convexity, exact linear tail, and junction smoothness
    at the advertised order (second differences for the C^2 family)."""
    fam = penalty_family(family) if isinstance(family, str) else family
    worst = 0.0
    for eps in eps_values:
        b = fam(eps)
        z = np.linspace(-1.0, 10 * eps, samples)
        v, d1, d2 = b.value(z), b.deriv(z), b.deriv2(z)
        left = z <= 0
        worst = max(worst, float(np.abs(v[left]).max()), float(np.abs(d1[left]).max()))
        pos = z > 1e-12
        if np.any(v[pos] <= 0):
            return CheckOutcome(False, float(-v[pos].min()), "positivity on z > 0 failed")
        worst = max(worst, float(max(0.0, -(d1.min()))), float(max(0.0, -(d2.min()))))
        worst = max(worst, float(max(0.0, -np.diff(v).min())), float(max(0.0, -np.diff(d1).min())))
        tail = z >= 2 * eps
        worst = max(worst, float(np.abs(v[tail] - (z[tail] - eps) / eps).max()))
        # midpoint convexity on random pairs
        rng = np.random.default_rng(7)
        za = rng.uniform(-1, 10 * eps, 512)
        zb = rng.uniform(-1, 10 * eps, 512)
        worst = max(worst, float((b.value(0.5 * (za + zb)) - 0.5 * (b.value(za) + b.value(zb))).max()))
        # junction regularity: one-sided second differences straddling each
        # junction must agree to O(step) for a C^2 family
        if getattr(fam, "name", "") == "poly_blend":
            for zj in (0.0, 2 * eps):
                for step in (eps / 256, eps / 1024):
                    fd_left = (b.value(zj) - 2 * b.value(zj - step) + b.value(zj - 2 * step)) / step ** 2
                    fd_right = (b.value(zj + 2 * step) - 2 * b.value(zj + step) + b.value(zj)) / step ** 2
                    mismatch = abs(fd_left - fd_right) * eps ** 2  # nondimensional
                    if mismatch > 40 * step / eps:
                        return CheckOutcome(False, mismatch, f"junction at {zj} not C^2")
    return CheckOutcome(worst <= 1e-9, worst)


def check_constraint_invariants(c, n: int, samples: int = 1000, seed: int = 0) -> CheckOutcome:
    """Convexity, H(0) < 0, and (for uniformly convex c) the coercivity
    consequences of the Hessian bounds, all on random samples."""
    rng = np.random.default_rng(seed)
    R = 3.0 * c.circumradius()
    dim = n if c.dim == 0 else c.dim
    P = rng.uniform(-R, R, size=(samples, dim))
    Q = rng.uniform(-R, R, size=(samples, dim))
    scale = max(1.0, float(np.abs(c.value(P)).max()))
    worst = float((c.value(0.5 * (P + Q)) - 0.5 * (c.value(P) + c.value(Q))).max()) / scale
    h0 = c.value(np.zeros(dim))
    if h0 >= 0:
        return CheckOutcome(False, h0, "H(0) must be negative")
    if c.theta > 0:
        dh0 = c.grad(np.zeros(dim))
        pp = np.sum(P * P, axis=1)
        g = c.grad(P)
        worst = max(worst, float((h0 + P @ dh0 + 0.5 * c.theta * pp - c.value(P)).max()) / scale)
        worst = max(worst, float((-h0 + 0.5 * c.theta * pp - (np.sum(g * P, axis=1) - c.value(P))).max()) / scale)
        gbound = np.linalg.norm(dh0) + math.sqrt(dim) * c.Theta * np.sqrt(pp)
        worst = max(worst, float((np.linalg.norm(g, axis=1) - gbound).max()) / scale)
    return CheckOutcome(worst <= 1e-9, worst)


def check_support_properties(body, n: int, samples: int = 10000, seed: int = 0) -> CheckOutcome:
    """Positive homogeneity (relative 1e-12) and subadditivity of the support function."""
    rng = np.random.default_rng(seed)
    dim = n
    V = rng.normal(size=(samples, dim))
    W = rng.normal(size=(samples, dim))
    t = rng.uniform(0.0, 5.0, size=samples)
    lv = body.support(V)
    hom = np.abs(body.support(t[:, None] * V) - t * lv) / np.maximum(1e-300, np.abs(t * lv))
    hom = np.where(t * np.abs(lv) < 1e-12, 0.0, hom)
    sub = body.support(V + W) - (lv + body.support(W))
    worst = max(float(hom.max()), float(sub.max() / max(1.0, float(np.abs(lv).max()))))
    return CheckOutcome(worst <= 1e-9, worst)


def check_elementary_inequality(probes: int = 10000, seed: int = 0, n: int = 2) -> CheckOutcome:
    """S.(XTX) >= lammin(S) lammin(T) |X|^2 on random PSD S, T and symmetric X."""
    rng = np.random.default_rng(seed)
    worst = -math.inf
    for _ in range(probes):
        A = rng.normal(size=(n, n))
        B = rng.normal(size=(n, n))
        S = A @ A.T
        T = B @ B.T
        C = rng.normal(size=(n, n))
        X = 0.5 * (C + C.T)
        lhs, rhs = hessian_product_probe(S, T, X)
        scale = max(1.0, abs(lhs), abs(rhs))
        worst = max(worst, (rhs - lhs) / scale)
    return CheckOutcome(worst <= 1e-9, worst)


# ---------------------------------------------------------------------------
# aggregate runner used by the command line


def run_verification(p: Problem, schedule, margins=(0.1, 0.2), family: str = "poly_blend",
                     newton_tol: float | None = None, u: GridFn | None = None,
                     probes: int = 1000, structural: bool = True) -> DiagnosticReport:
    """Solve (or take a provided solution) and run every per-solution check."""
    diag = DiagnosticReport(problem_name=p.name)
    eps_final = float(schedule[-1])
    h = max(p.grid.h)
    fam = penalty_family(family) if isinstance(family, str) else family
    if u is None:
        rep = solve(p, schedule, family=family, newton_tol=newton_tol)
        u = rep.u
        ubar = rep.unconstrained
        diag.stages = rep.stages
        penalty_sup = rep.final_stage.penalty_sup
    else:
        ubar = solve_unconstrained(p, newton_tol)
        H = p.constraint.value(interior_gradient(u))
        penalty_sup = float(np.max(fam(eps_final).value(H)))
    tol = 5.0 * h + 10.0 * eps_final
    diag.residual = viscosity_residual(u, p, tol)
    diag.constraint_sup = constraint_violation(u, p.constraint, eps_final)
    diag.constraint_bound = violation_bound(penalty_sup, eps_final, h)
    diag.constraint_passed = diag.constraint_sup <= diag.constraint_bound
    zero = GridFn(p.grid, np.zeros(p.grid.shape))
    diag.comparisons = [
        ("zero_below_solution", comparison_check(zero, u)),
        ("solution_below_unconstrained", comparison_check(u, ubar)),
    ]
    if structural:
        diag.structural = structural_suite(p, probes=probes)
    return diag


def structural_suite(p: Problem, probes: int = 1000) -> list[tuple[str, CheckOutcome]]:
    """Operator hypotheses, constraint invariants, penalty axioms, and the
    matrix-product inequality, each as a named pass/fail outcome."""
    out = []
    vrep = p.op.validate(p.grid.points(), probes=max(100, probes))
    worst = max((0.0 if c.passed else 1.0) for c in vrep.checks.values())
    out.append(("operator_hypotheses", CheckOutcome(vrep.passed, worst,
                ", ".join(f"{k}={'ok' if c.passed else 'FAIL'}" for k, c in vrep.checks.items()))))
    out.append(("constraint_invariants",
                check_constraint_invariants(p.constraint, p.grid.n, samples=probes)))
    for fam in ("poly_blend", "shifted_quadratic"):
        out.append((f"penalty_axioms_{fam}", check_penalty_axioms(fam)))
    out.append(("hessian_product_inequality",
                check_elementary_inequality(probes=max(1000, probes), n=p.grid.n)))
    if p.constraint.body is not None:
        out.append(("support_function_properties",
                    check_support_properties(p.constraint.body, p.grid.n, samples=10 * probes)))
    return out
