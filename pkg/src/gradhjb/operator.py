"""Elliptic nonlinearities F(M, x) acting on symmetric matrices.

Three families are supported: a single linear operator -a(x).M, the maximum
of finitely many linear operators, and the supremum over a finite control
set of diffusion operators -(1/2) s(x,z)s(x,z)^T . M. All are degenerate
elliptic, convex in M, and piecewise linear in M, so differentiating at a
point amounts to selecting the coefficient matrix of the active branch.

Structural constants: lam/Lam bound the coefficient eigenvalues (uniform
ellipticity), ups bounds the x-variation |F(M,x)-F(M,y)| <= ups(|M|+1)|x-y|.
When not declared they are inferred from a sample of domain points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SymMat",
    "EllipticOperator",
    "linear_operator",
    "bellman_operator",
    "diffusion_sup_operator",
    "ValidationReport",
    "ValidationFailure",
    "InvalidOperator",
]


class InvalidOperator(Exception):
    pass


class ValidationFailure(Exception):
    """Raised by validate(strict=True); carries the violating probe."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


@dataclass(frozen=True)
class SymMat:
    """Symmetric n x n matrix, n in {1, 2}; only the upper triangle is stored."""

    entries: tuple[float, ...]  # (m11,) or (m11, m12, m22)

    def __post_init__(self):
        ent = tuple(float(e) for e in self.entries)
        if len(ent) not in (1, 3):
            raise ValueError("entries must be (m11,) or (m11, m12, m22)")
        object.__setattr__(self, "entries", ent)

    @classmethod
    def from_array(cls, M) -> "SymMat":
        M = np.asarray(M, dtype=float)
        if M.shape == (1, 1):
            return cls((M[0, 0],))
        if M.shape == (2, 2):
            if abs(M[0, 1] - M[1, 0]) > 1e-12 * (1 + abs(M[0, 1])):
                raise ValueError("matrix is not symmetric")
            return cls((M[0, 0], M[0, 1], M[1, 1]))
        raise ValueError(f"unsupported shape {M.shape}")

    @classmethod
    def diag(cls, *d) -> "SymMat":
        if len(d) == 1:
            return cls((d[0],))
        return cls((d[0], 0.0, d[1]))

    @classmethod
    def identity(cls, n: int) -> "SymMat":
        return cls.diag(*([1.0] * n))

    @property
    def n(self) -> int:
        return 1 if len(self.entries) == 1 else 2

    @property
    def array(self) -> np.ndarray:
        if self.n == 1:
            return np.array([[self.entries[0]]])
        a, b, c = self.entries
        return np.array([[a, b], [b, c]])

    def trace(self) -> float:
        return self.entries[0] if self.n == 1 else self.entries[0] + self.entries[2]

    def frobenius(self) -> float:
        if self.n == 1:
            return abs(self.entries[0])
        a, b, c = self.entries
        return math.sqrt(a * a + 2 * b * b + c * c)

    def dot(self, other: "SymMat") -> float:
        """Trace inner product A . B."""
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        if self.n == 1:
            return self.entries[0] * other.entries[0]
        a, b, c = self.entries
        d, e, f = other.entries
        return a * d + 2 * b * e + c * f

    def eigenvalues(self) -> np.ndarray:
        if self.n == 1:
            return np.array([self.entries[0]])
        a, b, c = self.entries
        mean = 0.5 * (a + c)
        rad = math.hypot(0.5 * (a - c), b)
        return np.array([mean - rad, mean + rad])

    def __add__(self, other: "SymMat") -> "SymMat":
        return SymMat(tuple(x + y for x, y in zip(self.entries, other.entries)))

    def __mul__(self, t: float) -> "SymMat":
        return SymMat(tuple(t * x for x in self.entries))

    __rmul__ = __mul__

    def __neg__(self) -> "SymMat":
        return self * -1.0


def _contract(a_entries: np.ndarray, m_entries: np.ndarray) -> np.ndarray:
    """Trace inner product a . M from upper-triangle entry arrays (..., k)."""
    if a_entries.shape[-1] == 1:
        return a_entries[..., 0] * m_entries[..., 0]
    return (a_entries[..., 0] * m_entries[..., 0]
            + 2.0 * a_entries[..., 1] * m_entries[..., 1]
            + a_entries[..., 2] * m_entries[..., 2])


def _entry_eigs(entries: np.ndarray) -> np.ndarray:
    """Eigenvalue pairs of symmetric 2x2 entry arrays; (npts, 2) or (npts, 1)."""
    if entries.shape[-1] == 1:
        return entries
    a, b, c = entries[..., 0], entries[..., 1], entries[..., 2]
    mean = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    return np.stack([mean - rad, mean + rad], axis=-1)


# ---------------------------------------------------------------------------
# Coefficient fields: x -> symmetric matrix, vectorized over points


class ConstantCoefficient:
    is_constant = True

    def __init__(self, mat):
        self.sym = mat if isinstance(mat, SymMat) else SymMat.from_array(np.atleast_2d(mat))

    def tables(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.sym.entries), (points.shape[0], len(self.sym.entries))).copy()


class CallableCoefficient:
    """Wraps a pointwise x -> matrix callable; evaluated in a loop."""

    is_constant = False

    def __init__(self, fn, n: int):
        self.fn = fn
        self.n = n

    def tables(self, points: np.ndarray) -> np.ndarray:
        k = 1 if self.n == 1 else 3
        out = np.empty((points.shape[0], k))
        for i, x in enumerate(points):
            M = np.atleast_2d(np.asarray(self.fn(x), dtype=float))
            out[i] = (M[0, 0],) if self.n == 1 else (M[0, 0], 0.5 * (M[0, 1] + M[1, 0]), M[1, 1])
        return out


class DiffusionCoefficient:
    """a(x) = (1/2) s(x,z) s(x,z)^T for one fixed control value z."""

    def __init__(self, sigma_field, z, n: int):
        self.sigma_field = sigma_field
        self.z = z
        self.n = n
        self.is_constant = getattr(sigma_field, "is_constant", False)

    def tables(self, points: np.ndarray) -> np.ndarray:
        S = self.sigma_field.matrices(points, self.z)  # (npts, n, n)
        A = 0.5 * np.einsum("pij,pkj->pik", S, S)
        if self.n == 1:
            return A[:, 0, 0][:, None]
        return np.column_stack([A[:, 0, 0], A[:, 0, 1], A[:, 1, 1]])


class PointwiseSigma:
    """Adapts a pointwise sigma(x, z) -> (n, n) callable to the batched protocol."""

    is_constant = False

    def __init__(self, fn):
        self.fn = fn

    def matrices(self, points: np.ndarray, z) -> np.ndarray:
        return np.stack([np.atleast_2d(np.asarray(self.fn(x, z), dtype=float)) for x in points])


def _as_coefficient(obj, n: int):
    if hasattr(obj, "tables"):
        return obj
    if callable(obj):
        return CallableCoefficient(obj, n)
    if np.isscalar(obj):
        return ConstantCoefficient(SymMat.diag(*([float(obj)] * n)))
    return ConstantCoefficient(obj)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EllipticOperator:
    kind: str  # "linear" | "bellman_max" | "diffusion_sup"
    n: int
    branches: tuple
    lam: float
    Lam: float
    ups: float
    x_independent: bool
    sigma_field: object = None
    controls: tuple = ()

    def coefficients(self, points: np.ndarray) -> np.ndarray:
        """Branch coefficient tables at the given points, shape (K, npts, k)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.stack([br.tables(pts) for br in self.branches])

    def _branch_values(self, M_entries: np.ndarray, tables: np.ndarray) -> np.ndarray:
        return -_contract(tables, M_entries[None, :, :])  # (K, npts)

    def eval(self, M, x) -> float:
        """F(M, x): the active-branch value -a(x) . M maximized over branches."""
        M = M if isinstance(M, SymMat) else SymMat.from_array(M)
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        tables = self.coefficients(pts)
        vals = self._branch_values(np.asarray(M.entries)[None, :], tables)
        return float(vals.max(axis=0)[0])

    def linearize(self, M, x) -> SymMat:
        """Coefficient matrix of the active branch (smallest index on ties).

        The returned matrix is the derivative of F in M; it is negative
        definite with eigenvalues in [-Lam, -lam].
        """
        M = M if isinstance(M, SymMat) else SymMat.from_array(M)
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        tables = self.coefficients(pts)
        vals = self._branch_values(np.asarray(M.entries)[None, :], tables)
        k = int(np.argmax(vals[:, 0]))
        return SymMat(tuple(-tables[k, 0]))

    def noise_matrix(self, points: np.ndarray, branch: np.ndarray) -> np.ndarray:
        """Diffusion matrices s with (1/2) s s^T = a_branch, per point.

        For diffusion_sup operators this returns sigma(x, z_branch) directly;
        otherwise the symmetric square root of 2 a_branch(x).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        branch = np.broadcast_to(np.asarray(branch, dtype=int), (pts.shape[0],))
        if self.kind == "diffusion_sup":
            out = np.empty((pts.shape[0], self.n, self.n))
            for k in np.unique(branch):
                sel = branch == k
                out[sel] = self.sigma_field.matrices(pts[sel], self.controls[k])
            return out
        tables = self.coefficients(pts)  # (K, npts, k)
        ent = tables[branch, np.arange(pts.shape[0])]
        B = 2.0 * ent
        if self.n == 1:
            return np.sqrt(B[:, 0])[:, None, None]
        det = B[:, 0] * B[:, 2] - B[:, 1] ** 2
        s = np.sqrt(np.maximum(det, 0.0))
        t = np.sqrt(B[:, 0] + B[:, 2] + 2 * s)
        out = np.empty((pts.shape[0], 2, 2))
        out[:, 0, 0] = (B[:, 0] + s) / t
        out[:, 0, 1] = out[:, 1, 0] = B[:, 1] / t
        out[:, 1, 1] = (B[:, 2] + s) / t
        return out

    def validate(self, sample_points: np.ndarray, probes: int = 1000, seed: int = 0,
                 tol: float = 1e-9, strict: bool = False) -> "ValidationReport":
        """Probe the structural hypotheses: coefficient eigenvalue range,
        uniform ellipticity, convexity in M, and x-regularity."""
        if probes < 100:
            raise ValueError("probes must be at least 100")
        pts = np.atleast_2d(np.asarray(sample_points, dtype=float))
        rng = np.random.default_rng(seed)
        report = ValidationReport(operator=self)

        tables = self.coefficients(pts)  # (K, npts, k)
        eigs = _entry_eigs(tables)
        lo, hi = float(eigs.min()), float(eigs.max())
        report.add("eigenvalue_range",
                   lo >= self.lam - tol and hi <= self.Lam + tol,
                   worst=(lo, hi),
                   witness=None if lo >= self.lam - tol and hi <= self.Lam + tol
                   else tuple(pts[np.unravel_index(np.argmin(eigs) if lo < self.lam - tol
                                                   else np.argmax(eigs), eigs.shape)[1]]))

        k = 1 if self.n == 1 else 3
        idx = rng.integers(0, pts.shape[0], size=probes)
        idy = rng.integers(0, pts.shape[0], size=probes)
        Ms = rng.normal(scale=2.0, size=(probes, k))
        Ns_sym = rng.normal(scale=2.0, size=(probes, k))
        R = rng.normal(size=(probes, self.n, self.n))
        PSD = np.einsum("pij,pkj->pik", R, R)
        if self.n == 1:
            Npsd = PSD[:, 0, 0][:, None]
        else:
            Npsd = np.column_stack([PSD[:, 0, 0], PSD[:, 0, 1], PSD[:, 1, 1]])

        tab_x = tables[:, idx, :]  # (K, probes, k)
        tab_y = tables[:, idy, :]
        F = lambda tab, ent: (-_contract(tab, ent[None, :, :])).max(axis=0)

        # uniform ellipticity along PSD perturbations
        trN = Npsd[:, 0] if self.n == 1 else Npsd[:, 0] + Npsd[:, 2]
        dF = F(tab_x, Ms + Npsd) - F(tab_x, Ms)
        lo_violation = float((-self.Lam * trN - tol - dF).max())
        hi_violation = float((dF - (-self.lam * trN + tol)).max())
        ok = lo_violation <= 0 and hi_violation <= 0
        worst_i = int(np.argmax(np.maximum(-self.Lam * trN - dF, dF + self.lam * trN)))
        report.add("uniform_ellipticity", ok, worst=max(lo_violation, hi_violation),
                   witness=None if ok else (Ms[worst_i], Npsd[worst_i], tuple(pts[idx[worst_i]])))

        # convexity in M (midpoint inequality)
        gap = F(tab_x, 0.5 * (Ms + Ns_sym)) - 0.5 * (F(tab_x, Ms) + F(tab_x, Ns_sym))
        ok = float(gap.max()) <= tol
        worst_i = int(np.argmax(gap))
        report.add("convexity", ok, worst=float(gap.max()),
                   witness=None if ok else (Ms[worst_i], Ns_sym[worst_i], tuple(pts[idx[worst_i]])))

        # x-regularity
        frob = np.sqrt(_contract(Ms ** 2, np.ones_like(Ms)))
        dist = np.linalg.norm(pts[idx] - pts[idy], axis=1)
        diff = np.abs(F(tab_x, Ms) - F(tab_y, Ms))
        bound = self.ups * (frob + 1.0) * dist + tol
        ok = bool(np.all(diff <= bound))
        worst_i = int(np.argmax(diff - bound))
        report.add("x_regularity", ok, worst=float((diff - bound).max()),
                   witness=None if ok else (Ms[worst_i], None, tuple(pts[idx[worst_i]]), tuple(pts[idy[worst_i]])))

        report.constants = {
            "lam": self.lam, "Lam": self.Lam, "ups": self.ups,
            "omega_slope": self._omega_slope(pts),
        }
        if strict and not report.passed:
            bad = [name for name, c in report.checks.items() if not c.passed]
            first = report.checks[bad[0]]
            raise ValidationFailure(f"operator validation failed: {', '.join(bad)}", first.witness)
        return report

    def _omega_slope(self, pts: np.ndarray) -> float:
        """Slope c of the comparison modulus omega(r) = c r.

        c = 3 Lip(a^(1/2))^2 for coefficient operators, (3/2) L^2 with L the
        x-Lipschitz constant of sigma for control-supremum operators;
        identically zero for x-independent operators.
        """
        if self.x_independent:
            return 0.0
        if self.kind == "diffusion_sup":
            L = 0.0
            for z in self.controls:
                S = self.sigma_field.matrices(pts, z)
                L = max(L, _lipschitz(pts, S.reshape(pts.shape[0], -1)))
            return 1.5 * L ** 2
        c = 0.0
        for k in range(len(self.branches)):
            roots = self.noise_matrix(pts, np.full(pts.shape[0], k)) / math.sqrt(2.0)
            c = max(c, 3.0 * _lipschitz(pts, roots.reshape(pts.shape[0], -1)) ** 2)
        return c


def _lipschitz(pts: np.ndarray, vals: np.ndarray) -> float:
    """Max difference quotient of a matrix field over sampled point pairs."""
    m = pts.shape[0]
    if m < 2:
        return 0.0
    rng = np.random.default_rng(1234)
    i = rng.integers(0, m, size=min(4 * m, 20000))
    j = rng.integers(0, m, size=i.size)
    keep = i != j
    i, j = i[keep], j[keep]
    num = np.linalg.norm(vals[i] - vals[j], axis=1)
    den = np.linalg.norm(pts[i] - pts[j], axis=1)
    return float((num / den).max()) if i.size else 0.0


@dataclass
class CheckResult:
    passed: bool
    worst: object
    witness: object


class ValidationReport:
    def __init__(self, operator=None):
        self.operator = operator
        self.checks: dict[str, CheckResult] = {}
        self.constants: dict[str, float] = {}

    def add(self, name, passed, worst=None, witness=None):
        self.checks[name] = CheckResult(bool(passed), worst, witness)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks.values())

    def summary_lines(self):
        for name, c in self.checks.items():
            yield f"{'PASS' if c.passed else 'FAIL'} operator.{name} worst={c.worst}"


# ---------------------------------------------------------------------------
# Constructors


def _infer_constants(branches, n, pts, lam, Lam, ups):
    const = all(getattr(b, "is_constant", False) for b in branches)
    if (lam is None or Lam is None or ups is None) and pts is None and not const:
        raise InvalidOperator("x-dependent coefficients need lam/Lam/ups or domain_points to infer them")
    if pts is None:
        pts = np.zeros((1, n))
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    tables = np.stack([b.tables(pts) for b in branches])
    eigs = _entry_eigs(tables)
    if lam is None:
        lam = float(eigs.min())
    if Lam is None:
        Lam = float(eigs.max())
    if ups is None:
        if const:
            ups = 0.0
        else:
            ups = 1.05 * max(_lipschitz(pts, tables[k]) for k in range(tables.shape[0]))
    if not 0 < lam <= Lam:
        raise InvalidOperator(f"need 0 < lam <= Lam, got lam={lam}, Lam={Lam}")
    return float(lam), float(Lam), float(ups), const


def linear_operator(a, n: int = None, lam=None, Lam=None, ups=None, domain_points=None) -> EllipticOperator:
    """F(M, x) = -a(x) . M."""
    if n is None:
        n = _guess_dim(a)
    branch = _as_coefficient(a, n)
    lam, Lam, ups, const = _infer_constants((branch,), n, domain_points, lam, Lam, ups)
    return EllipticOperator("linear", n, (branch,), lam, Lam, ups, const)


def bellman_operator(a_list, n: int = None, lam=None, Lam=None, ups=None, domain_points=None) -> EllipticOperator:
    """F(M, x) = max_k { -a_k(x) . M }."""
    if not a_list:
        raise InvalidOperator("need at least one coefficient matrix")
    if n is None:
        n = _guess_dim(a_list[0])
    branches = tuple(_as_coefficient(a, n) for a in a_list)
    lam, Lam, ups, const = _infer_constants(branches, n, domain_points, lam, Lam, ups)
    return EllipticOperator("bellman_max", n, branches, lam, Lam, ups, const)


def diffusion_sup_operator(sigma, controls, n: int, lam=None, Lam=None, ups=None,
                           domain_points=None, x_independent=None) -> EllipticOperator:
    """F(M, x) = sup_{z in U} { -(1/2) s(x,z) s(x,z)^T . M } over a finite U."""
    if not len(controls):
        raise InvalidOperator("control set must be a nonempty finite list")
    field = sigma if hasattr(sigma, "matrices") else PointwiseSigma(sigma)
    branches = tuple(DiffusionCoefficient(field, z, n) for z in controls)
    lam, Lam, ups, const = _infer_constants(branches, n, domain_points, lam, Lam, ups)
    if x_independent is not None:
        const = bool(x_independent)
    return EllipticOperator("diffusion_sup", n, branches, lam, Lam, ups, const,
                            sigma_field=field, controls=tuple(controls))


def _guess_dim(a) -> int:
    if isinstance(a, SymMat):
        return a.n
    if hasattr(a, "n"):
        return a.n
    if np.isscalar(a):
        return 1
    arr = np.asarray(a, dtype=float) if not callable(a) else None
    if arr is not None and arr.ndim == 2:
        return arr.shape[0]
    raise InvalidOperator("cannot infer dimension; pass n explicitly")
