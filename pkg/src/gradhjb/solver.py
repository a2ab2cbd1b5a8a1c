"""Damped Newton continuation for the penalized gradient-constrained problem.

The constrained equation max{F(D2u, x) - f(x), H(Du)} = 0 is approximated by
F(D2u, x) + b_eps(H(Du)) = f(x) with Dirichlet data, solved for a decreasing
sequence of eps with warm starts. Each penalized problem is solved by damped
Newton: the matrix coefficients come from the active operator branch (frozen
per outer iteration, Howard style), the first-order coefficients from
b'(H) DH, and steps are backtracked on the residual sup norm. Central
differences are used throughout; loss of monotonicity shows up as a singular
or stagnating linear solve and is reported, not hidden.

Linear solves are direct: tridiagonal in 1D, sparse LU in 2D.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .grid import Grid, GridFn
from .penalty import PenaltyFn, penalty_family

__all__ = [
    "Problem",
    "SolveReport",
    "EpsStage",
    "solve",
    "solve_penalized",
    "solve_unconstrained",
    "active_set",
    "NonConvergence",
    "SingularLinearSystem",
    "WellPosednessError",
    "default_newton_tol",
]


class NonConvergence(Exception):
    def __init__(self, iters, residual, eps=None):
        self.iters, self.residual, self.eps = iters, residual, eps
        at = "" if eps is None else f" at eps={eps:g}"
        super().__init__(f"Newton did not converge{at}: residual {residual:.3e} after {iters} iterations")


class SingularLinearSystem(Exception):
    """The linearized system lost invertibility; refine the grid or run the
    monotonicity check on the operator coefficients."""


class WellPosednessError(Exception):
    pass


class ConstantField:
    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, pts):
        return np.full(np.atleast_2d(pts).shape[0], self.value)


def _as_field(obj):
    return obj if callable(obj) else ConstantField(obj)


@dataclass
class Problem:
    """One Dirichlet problem: operator, gradient constraint, source and data.

    f and phi are callables mapping an (m, n) array of points to (m,) values.
    Well-posedness gate: f > 0 on the grid, H(0) < 0, and phi >= 0 on the
    boundary (so that 0 is a subsolution lying below the boundary data).
    Pass allow_unverified_wellposedness=True to skip the gate, asserting an
    explicit subsolution certificate exists.
    """

    op: object
    constraint: object
    f: object
    phi: object
    grid: Grid
    name: str = "problem"
    allow_unverified_wellposedness: bool = False

    def __post_init__(self):
        self.f = _as_field(self.f)
        self.phi = _as_field(self.phi)
        if self.op.n != self.grid.n:
            raise WellPosednessError(f"operator dimension {self.op.n} != grid dimension {self.grid.n}")
        cdim = self.constraint.dim
        if cdim not in (0, self.grid.n):
            raise WellPosednessError(f"constraint dimension {cdim} != grid dimension {self.grid.n}")
        if self.allow_unverified_wellposedness:
            return
        fvals = np.asarray(self.f(self.grid.points()))
        if not np.all(fvals > 0):
            raise WellPosednessError("source f must be strictly positive on the closed domain")
        h0 = self.constraint.value(np.zeros(self.grid.n))
        if not h0 < 0:
            raise WellPosednessError(f"H(0) = {h0:g} must be negative (0 interior to the constraint set)")
        bpts = self.grid.points()[self.grid.boundary_mask.ravel()]
        if not np.all(np.asarray(self.phi(bpts)) >= 0):
            raise WellPosednessError("boundary data must be >= 0 for the zero subsolution to apply")

    def boundary_fn(self, grid: Grid | None = None) -> GridFn:
        return GridFn.with_boundary(grid or self.grid, self.phi)


@dataclass
class EpsStage:
    eps: float
    newton_iters: int
    residual_sup: float
    constraint_sup: float  # max interior H(Du)
    penalty_sup: float     # max interior b_eps(H(Du))
    lower_gap: float       # max(0 - u); <= 0 means the zero lower bound holds
    upper_gap: float       # max(u - u_unconstrained); <= 0 means the upper bound holds


@dataclass
class SolveReport:
    u: GridFn
    stages: list[EpsStage]
    active: np.ndarray
    wall_time: float
    unconstrained: GridFn
    stage_solutions: list[GridFn] | None = None

    @property
    def final_stage(self) -> EpsStage:
        return self.stages[-1]

    def summary_lines(self):
        yield f"stages={len(self.stages)} wall_time={self.wall_time:.3f}s active_points={int(self.active.sum())}"
        for s in self.stages:
            yield (f"eps={s.eps:<10.3g} newton={s.newton_iters:<4d} residual={s.residual_sup:.3e} "
                   f"maxH={s.constraint_sup:+.4e} maxBeta={s.penalty_sup:.4e} "
                   f"lower_gap={s.lower_gap:+.2e} upper_gap={s.upper_gap:+.2e}")


def default_newton_tol(n: int) -> float:
    return 1e-10 if n == 1 else 1e-8


# ---------------------------------------------------------------------------
# residual and Jacobian assembly


class _Workspace:
    def __init__(self, problem: Problem):
        g = problem.grid
        self.problem = problem
        self.g = g
        self.n = g.n
        self.h = g.h
        self.pts = g.interior_points()
        self.f_int = np.asarray(problem.f(self.pts), dtype=float)
        self.tables = problem.op.coefficients(self.pts)  # (K, n_int, k)
        self.n_int = self.pts.shape[0]
        if g.n == 2:
            n1, n2 = g.shape[0] - 2, g.shape[1] - 2
            q = np.arange(n1 * n2)
            i, j = q // n2, q % n2
            self._idx = (n1, n2, q, i, j)

    def interior_fields(self, values: np.ndarray):
        """Gradient, Hessian entries at interior points from a full values array."""
        g = self.g
        v = values
        if self.n == 1:
            h = self.h[0]
            p = ((v[2:] - v[:-2]) / (2 * h))[:, None]
            M = ((v[2:] - 2 * v[1:-1] + v[:-2]) / h ** 2)[:, None]
            return p, M
        h1, h2 = self.h
        p1 = (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * h1)
        p2 = (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * h2)
        m11 = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / h1 ** 2
        m22 = (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / h2 ** 2
        m12 = (v[2:, 2:] + v[:-2, :-2] - v[2:, :-2] - v[:-2, 2:]) / (4 * h1 * h2)
        p = np.column_stack([p1.ravel(), p2.ravel()])
        M = np.column_stack([m11.ravel(), m12.ravel(), m22.ravel()])
        return p, M

    def residual(self, values: np.ndarray, pen: PenaltyFn | None):
        p, M = self.interior_fields(values)
        if self.tables.shape[-1] == 1:
            branch_vals = -(self.tables[..., 0] * M[None, :, 0])
        else:
            branch_vals = -(self.tables[..., 0] * M[None, :, 0]
                            + 2.0 * self.tables[..., 1] * M[None, :, 1]
                            + self.tables[..., 2] * M[None, :, 2])
        kstar = np.argmax(branch_vals, axis=0)
        F = branch_vals[kstar, np.arange(self.n_int)]
        if pen is None:
            H = None
            beta = 0.0
            R = F - self.f_int
        else:
            H = self.problem.constraint.value(p)
            beta = pen.value(H)
            R = F + beta - self.f_int
        return R, {"p": p, "M": M, "kstar": kstar, "H": H, "beta": beta, "F": F}

    def jacobian(self, aux, pen: PenaltyFn | None):
        L = -self.tables[aux["kstar"], np.arange(self.n_int)]  # (n_int, k)
        if pen is None:
            b = np.zeros((self.n_int, self.n))
        else:
            bp = pen.deriv(aux["H"])
            b = bp[:, None] * self.problem.constraint.grad(aux["p"])
        if self.n == 1:
            h = self.h[0]
            L11 = L[:, 0]
            ab = np.zeros((3, self.n_int))
            ab[1] = -2 * L11 / h ** 2
            sup_ = L11 / h ** 2 + b[:, 0] / (2 * h)
            sub_ = L11 / h ** 2 - b[:, 0] / (2 * h)
            ab[0, 1:] = sup_[:-1]
            ab[2, :-1] = sub_[1:]
            return ("banded", ab)
        h1, h2 = self.h
        n1, n2, q, i, j = self._idx
        A11 = L[:, 0] / h1 ** 2
        A22 = L[:, 2] / h2 ** 2
        C = L[:, 1] / (2 * h1 * h2)
        rows = [q]
        cols = [q]
        vals = [-2 * A11 - 2 * A22]

        def add(mask, col, val):
            rows.append(q[mask])
            cols.append(col[mask])
            vals.append(val[mask])

        right, left = i < n1 - 1, i > 0
        up, down = j < n2 - 1, j > 0
        add(right, q + n2, A11 + b[:, 0] / (2 * h1))
        add(left, q - n2, A11 - b[:, 0] / (2 * h1))
        add(up, q + 1, A22 + b[:, 1] / (2 * h2))
        add(down, q - 1, A22 - b[:, 1] / (2 * h2))
        if np.any(C != 0.0):
            add(right & up, q + n2 + 1, C)
            add(left & down, q - n2 - 1, C)
            add(right & down, q + n2 - 1, -C)
            add(left & up, q - n2 + 1, -C)
        mat = scipy.sparse.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_int, self.n_int))
        return ("sparse", mat)

    def solve_linear(self, J, rhs):
        kind, mat = J
        try:
            if kind == "banded":
                delta = scipy.linalg.solve_banded((1, 1), mat, rhs)
            else:
                delta = scipy.sparse.linalg.splu(mat).solve(rhs)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, RuntimeError) as exc:
            raise SingularLinearSystem(str(exc)) from exc
        if not np.all(np.isfinite(delta)):
            raise SingularLinearSystem("linear solve produced non-finite values")
        return delta


def _newton(ws: _Workspace, u: GridFn, pen: PenaltyFn | None, tol: float,
            max_iters: int, max_backtracks: int = 30):
    """Damped Newton on the interior unknowns; boundary rows stay fixed."""
    values = u.values.copy()
    R, aux = ws.residual(values, pen)
    res = float(np.abs(R).max())
    iters = 0
    interior = (slice(1, -1),) if ws.n == 1 else (slice(1, -1), slice(1, -1))
    shape_int = tuple(m - 2 for m in ws.g.shape)
    while res > tol:
        if iters >= max_iters:
            raise NonConvergence(iters, res)
        J = ws.jacobian(aux, pen)
        delta = ws.solve_linear(J, -R).reshape(shape_int)
        t = 1.0
        accepted = False
        for _ in range(max_backtracks + 1):
            trial = values.copy()
            trial[interior] += t * delta
            R_try, aux_try = ws.residual(trial, pen)
            res_try = float(np.abs(R_try).max())
            if np.isfinite(res_try) and res_try < res:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            raise NonConvergence(iters, res)
        values, R, aux, res = trial, R_try, aux_try, res_try
        iters += 1
    return GridFn(ws.g, values), iters, res, aux


def solve_unconstrained(p: Problem, newton_tol: float | None = None, max_iters: int = 200) -> GridFn:
    """Pure elliptic solve F(D2u, x) = f with the problem's boundary data."""
    tol = default_newton_tol(p.grid.n) if newton_tol is None else newton_tol
    ws = _Workspace(p)
    u0 = p.boundary_fn()
    u, _, _, _ = _newton(ws, u0, None, tol, max_iters)
    return u


def solve_penalized(p: Problem, eps: float, init: GridFn, family: str | type = "poly_blend",
                    newton_tol: float | None = None, max_iters: int = 200) -> GridFn:
    """Solve the penalized equation at one eps from the given initial iterate."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    bvals = p.boundary_fn(init.grid).boundary_values()
    if not np.allclose(init.boundary_values(), bvals, atol=1e-12):
        raise ValueError("initial iterate does not satisfy the boundary data")
    tol = default_newton_tol(p.grid.n) if newton_tol is None else newton_tol
    fam = penalty_family(family) if isinstance(family, str) else family
    ws = _Workspace(p)
    u, _, _, _ = _newton(ws, init, fam(eps), tol, max_iters)
    return u


def _stage_with_rescue(ws, u, eps_from, eps_to, fam, tol, max_iters, depth=0):
    """Newton at eps_to, inserting geometric intermediate eps values on failure."""
    try:
        return _newton(ws, u, fam(eps_to), tol, max_iters)
    except NonConvergence:
        if depth >= 6:
            raise
        mid = float(np.sqrt(eps_from * eps_to))
        u, it1, _, _ = _stage_with_rescue(ws, u, eps_from, mid, fam, tol, max_iters, depth + 1)
        u, it2, res, aux = _stage_with_rescue(ws, u, mid, eps_to, fam, tol, max_iters, depth + 1)
        return u, it1 + it2, res, aux


def solve(p: Problem, schedule, family: str | type = "poly_blend",
          newton_tol: float | None = None, max_iters: int = 200,
          keep_stage_solutions: bool = False) -> SolveReport:
    """Continuation over a strictly decreasing eps schedule with warm starts.

    The first stage starts from the unconstrained elliptic solve. Per-stage
    records include the residual, the extreme constraint and penalty values,
    and the gaps against the zero lower bound and the unconstrained upper
    bound. Intermediate eps values are inserted automatically if a stage's
    Newton iteration fails; the report still contains one record per
    scheduled eps.
    """
    schedule = [float(e) for e in schedule]
    if not schedule or any(e <= 0 for e in schedule) or any(
            b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be a nonempty, strictly decreasing list of positive eps")
    tol = default_newton_tol(p.grid.n) if newton_tol is None else newton_tol
    fam = penalty_family(family) if isinstance(family, str) else family
    t0 = time.perf_counter()
    ws = _Workspace(p)
    ubar = solve_unconstrained(p, tol, max_iters)
    u = ubar.copy()
    stages = []
    kept = [] if keep_stage_solutions else None
    eps_prev = 1.0
    for eps in schedule:
        try:
            u, iters, res, aux = _stage_with_rescue(ws, u, max(eps_prev, eps), eps, fam, tol, max_iters)
        except (NonConvergence, SingularLinearSystem) as exc:
            if isinstance(exc, NonConvergence):
                exc.eps = eps
            raise
        stages.append(EpsStage(
            eps=eps,
            newton_iters=iters,
            residual_sup=res,
            constraint_sup=float(aux["H"].max()),
            penalty_sup=float(np.max(aux["beta"])),
            lower_gap=float((0.0 - u.values).max()),
            upper_gap=float((u.values - ubar.values).max()),
        ))
        if kept is not None:
            kept.append(u.copy())
        eps_prev = eps
    active = active_set(u, p.constraint, 10.0 * schedule[-1])
    return SolveReport(u=u, stages=stages, active=active,
                       wall_time=time.perf_counter() - t0,
                       unconstrained=ubar, stage_solutions=kept)


def active_set(u: GridFn, c, tol: float) -> np.ndarray:
    """Interior mask where the gradient constraint is within tol of binding."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    from .grid import interior_gradient

    H = c.value(interior_gradient(u))
    mask = np.zeros(u.grid.shape, dtype=bool)
    inner = (H >= -tol).reshape(tuple(m - 2 for m in u.grid.shape))
    if u.grid.n == 1:
        mask[1:-1] = inner
    else:
        mask[1:-1, 1:-1] = inner
    return mask
