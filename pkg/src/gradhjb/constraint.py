"""Convex bodies, their support functions, and the gradient constraints they induce.

A convex body K with support function l(v) = sup_{p in K} v.p induces the
constraint H(p) = sup_{|v|=1} (p.v - l(v)), whose zero sublevel set is K.
For a point p this equals the signed Euclidean distance to the boundary of K,
which is what the exact evaluators below compute for balls, boxes and
polytopes; ellipsoids use sampled direction maximization with local
refinement. Analytic constraints (norm, squared norm, quadratic form) and
uniformly convex surrogates with the same sublevel set are also provided.

All constraint objects are immutable and safe for concurrent reads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConstraintError",
    "InvalidParameter",
    "DegenerateBody",
    "NoSurrogate",
    "Ball",
    "Box",
    "Ellipsoid",
    "Polytope",
    "support_function",
    "Constraint",
    "BallNormConstraint",
    "BallNormSquaredConstraint",
    "EllipsoidQuadraticConstraint",
    "SupportConstraint",
    "analytic_constraint",
    "constraint_from_support",
    "surrogate",
]


class ConstraintError(Exception):
    pass


class InvalidParameter(ConstraintError):
    pass


class DegenerateBody(ConstraintError):
    """0 is not interior to the body, so H(0) >= 0 and well-posedness fails."""


class NoSurrogate(ConstraintError):
    """No uniformly convex constraint with the same sublevel set is available."""


# ---------------------------------------------------------------------------
# Convex bodies


@dataclass(frozen=True)
class Ball:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidParameter(f"ball radius must be positive, got {self.radius}")

    def support(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.radius * np.linalg.norm(v, axis=-1)

    def circumradius(self) -> float:
        return self.radius


@dataclass(frozen=True)
class Box:
    halfwidths: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "halfwidths", tuple(float(w) for w in self.halfwidths))
        if len(self.halfwidths) not in (1, 2) or any(w <= 0 for w in self.halfwidths):
            raise InvalidParameter(f"box halfwidths must be 1 or 2 positive reals, got {self.halfwidths}")

    def support(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return np.abs(v) @ np.asarray(self.halfwidths)

    def circumradius(self) -> float:
        return float(np.linalg.norm(self.halfwidths))


@dataclass(frozen=True)
class Ellipsoid:
    """The set {p : p . A^{-1} p <= 1} for symmetric positive definite shape A."""

    shape: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        A = np.asarray(self.shape, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] not in (1, 2):
            raise InvalidParameter("ellipsoid shape must be a 1x1 or 2x2 matrix")
        if not np.allclose(A, A.T, atol=1e-12):
            raise InvalidParameter("ellipsoid shape matrix must be symmetric")
        if np.linalg.eigvalsh(A).min() <= 0:
            raise InvalidParameter("ellipsoid shape matrix must be positive definite")
        object.__setattr__(self, "shape", tuple(tuple(float(x) for x in row) for row in A))

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.shape, dtype=float)

    def support(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        A = self.matrix
        return np.sqrt(np.einsum("...i,ij,...j->...", v, A, v))

    def circumradius(self) -> float:
        return float(np.sqrt(np.linalg.eigvalsh(self.matrix).max()))


@dataclass(frozen=True)
class Polytope:
    vertices: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        if V.shape[1] not in (1, 2):
            raise InvalidParameter("polytope vertices must live in dimension 1 or 2")
        if V.shape[0] < V.shape[1] + 1:
            raise InvalidParameter(f"need at least n+1 vertices, got {V.shape[0]}")
        if not np.all(np.isfinite(V)):
            raise InvalidParameter("polytope vertices must be finite")
        object.__setattr__(self, "vertices", tuple(tuple(float(x) for x in row) for row in V))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=float)

    def support(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return (v @ self.array.T).max(axis=-1)

    def circumradius(self) -> float:
        return float(np.linalg.norm(self.array, axis=1).max())

    def edges(self):
        """Outward unit normals and offsets (n_e, c_e) with K = {x : n_e.x <= c_e},
        plus the edge segments. 2D bodies only."""
        from scipy.spatial import ConvexHull

        V = self.array
        hull = ConvexHull(V)
        normals = hull.equations[:, :2]
        offsets = -hull.equations[:, 2]
        segs = V[hull.simplices]  # (n_edges, 2, 2)
        return normals, offsets, segs


def body_dim(body) -> int:
    if isinstance(body, Ball):
        return 0  # radius alone does not fix a dimension; balls work in 1D and 2D
    if isinstance(body, Box):
        return len(body.halfwidths)
    if isinstance(body, Ellipsoid):
        return body.matrix.shape[0]
    if isinstance(body, Polytope):
        return body.array.shape[1]
    raise InvalidParameter(f"not a convex body: {body!r}")


def support_function(body, v: np.ndarray) -> np.ndarray | float:
    """l(v) = sup_{p in K} v.p; positively homogeneous of degree 1 in v."""
    out = body.support(v)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Constraints


class Constraint:
    """Convex gradient constraint H with gradient DH and convexity metadata.

    theta/Theta bound the eigenvalues of D2H where it exists; theta = 0 marks
    a convex but not uniformly convex constraint (Theta is then infinite for
    the kinked evaluators below, whose a.e. Hessians are unbounded).
    """

    kind: str = "custom"
    provenance: str = "analytic"
    theta: float = 0.0
    Theta: float = math.inf
    body = None

    def _value(self, P: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad(self, P: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def value(self, p: np.ndarray):
        P = np.atleast_2d(np.asarray(p, dtype=float))
        out = self._value(P)
        return float(out[0]) if np.ndim(p) <= 1 else out

    def grad(self, p: np.ndarray):
        P = np.atleast_2d(np.asarray(p, dtype=float))
        out = self._grad(P)
        return out[0] if np.ndim(p) <= 1 else out

    def __call__(self, p):
        return self.value(p)

    @property
    def dim(self) -> int:
        raise NotImplementedError

    def circumradius(self) -> float:
        """Circumradius of the zero sublevel set {H <= 0}."""
        raise NotImplementedError

    def cost_support(self, v: np.ndarray) -> np.ndarray | None:
        """Support function of the generating body, for singular-control costs.

        Returns None when no body is attached and the sublevel set is not a
        ball; callers decide whether that is an error.
        """
        if self.body is not None:
            return self.body.support(v)
        if self.kind in ("ball_norm", "ball_norm_squared"):
            v = np.asarray(v, dtype=float)
            return self.circumradius() * np.linalg.norm(v, axis=-1)
        return None


def _lex_min_rows(rows: np.ndarray) -> np.ndarray:
    order = np.lexsort(rows.T[::-1])
    return rows[order[0]]


def _unit_lex_smallest(n: int) -> np.ndarray:
    e = np.zeros(n)
    e[0] = -1.0
    return e


@dataclass(frozen=True)
class BallNormConstraint(Constraint):
    """H(p) = |p| - r. Convex, not uniformly convex; kinked at p = 0."""

    radius: float
    provenance: str = "analytic"

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidParameter("radius must be positive")

    kind = "ball_norm"
    theta = 0.0
    Theta = math.inf
    body = None

    @property
    def dim(self) -> int:
        return 0

    def _value(self, P):
        return np.linalg.norm(P, axis=-1) - self.radius

    def _grad(self, P):
        nrm = np.linalg.norm(P, axis=-1)
        out = np.zeros_like(P)
        nz = nrm > 0
        out[nz] = P[nz] / nrm[nz, None]
        if np.any(~nz):
            out[~nz] = _unit_lex_smallest(P.shape[1])
        return out

    def circumradius(self) -> float:
        return self.radius


@dataclass(frozen=True)
class BallNormSquaredConstraint(Constraint):
    """H(p) = |p|^2 - r^2. Uniformly convex with D2H = 2I."""

    radius: float
    provenance: str = "analytic"
    body: object = None  # generating body, kept through surrogation for cost support

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidParameter("radius must be positive")

    kind = "ball_norm_squared"
    theta = 2.0
    Theta = 2.0

    @property
    def dim(self) -> int:
        return 0

    def _value(self, P):
        return np.sum(P * P, axis=-1) - self.radius ** 2

    def _grad(self, P):
        return 2.0 * P

    def circumradius(self) -> float:
        return self.radius


class EllipsoidQuadraticConstraint(Constraint):
    """H(p) = p . A p - c for positive definite A and c > 0."""

    kind = "ellipsoid_quadratic"

    def __init__(self, A, c: float, provenance: str = "analytic", body=None):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12):
            raise InvalidParameter("A must be a symmetric matrix")
        eig = np.linalg.eigvalsh(A)
        if eig.min() <= 0:
            raise InvalidParameter("A must be positive definite")
        if not c > 0:
            raise InvalidParameter("c must be positive")
        self.A = A
        self.c = float(c)
        self.theta = float(2 * eig.min())
        self.Theta = float(2 * eig.max())
        self.provenance = provenance
        self.body = body

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def _value(self, P):
        return np.einsum("...i,ij,...j->...", P, self.A, P) - self.c

    def _grad(self, P):
        return 2.0 * P @ self.A

    def circumradius(self) -> float:
        return float(np.sqrt(self.c / np.linalg.eigvalsh(self.A).min()))

    def __repr__(self):
        return f"EllipsoidQuadraticConstraint(A={self.A.tolist()}, c={self.c})"


class SupportConstraint(Constraint):
    """H(p) = sup_{|v|=1} (p.v - l(v)): signed distance from p to the boundary of K.

    Exact for balls, boxes and polytopes; for ellipsoids the maximization is
    sampled over sample_count directions and refined by golden-section search.
    The gradient is the maximizing direction (envelope rule); at kinks the
    lexicographically smallest maximizer is returned, a deterministic
    subgradient selection.
    """

    kind = "from_support"
    provenance = "from_support"
    theta = 0.0
    Theta = math.inf

    def __init__(self, body, sample_count: int = 256):
        if sample_count < 4:
            raise InvalidParameter("sample_count must be at least 4")
        self.body = body
        self.sample_count = int(sample_count)
        if isinstance(body, Polytope):
            d = body_dim(body)
            if d == 2:
                try:
                    normals, offsets, segs = body.edges()
                except Exception as exc:  # flat vertex sets make qhull fail
                    raise DegenerateBody(f"polytope has empty interior: {exc}") from exc
                if offsets.min() <= 0:
                    raise DegenerateBody("0 is not interior to the polytope")
                self._normals, self._offsets, self._segs = normals, offsets, segs
            else:
                V = body.array[:, 0]
                if not (V.min() < 0 < V.max()):
                    raise DegenerateBody("0 is not interior to the interval")
                self._lohi = (float(V.min()), float(V.max()))

    @property
    def dim(self) -> int:
        return body_dim(self.body)

    # -- evaluators per body type

    def _value(self, P):
        b = self.body
        if isinstance(b, Ball):
            return np.linalg.norm(P, axis=-1) - b.radius
        if isinstance(b, Box):
            return self._box_value(P)
        if isinstance(b, Polytope):
            return self._poly_value(P)
        if isinstance(b, Ellipsoid):
            return self._sampled(P)[0]
        raise InvalidParameter(f"unsupported body {b!r}")

    def _grad(self, P):
        b = self.body
        if isinstance(b, Ball):
            nrm = np.linalg.norm(P, axis=-1)
            out = np.zeros_like(P)
            nz = nrm > 0
            out[nz] = P[nz] / nrm[nz, None]
            out[~nz] = _unit_lex_smallest(P.shape[1])
            return out
        if isinstance(b, Box):
            return self._box_grad(P)
        if isinstance(b, Polytope):
            return self._poly_grad(P)
        if isinstance(b, Ellipsoid):
            return self._sampled(P)[1]
        raise InvalidParameter(f"unsupported body {b!r}")

    def _box_value(self, P):
        w = np.asarray(self.body.halfwidths)
        d = np.abs(P) - w
        inside_val = d.max(axis=-1)
        outside_val = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        return np.where(np.any(d > 0, axis=-1), outside_val, inside_val)

    def _box_grad(self, P):
        w = np.asarray(self.body.halfwidths)
        d = np.abs(P) - w
        out = np.zeros_like(P)
        outside = np.any(d > 0, axis=-1)
        if np.any(outside):
            q = np.clip(P[outside], -w, w)
            diff = P[outside] - q
            out[outside] = diff / np.linalg.norm(diff, axis=-1, keepdims=True)
        ins = np.nonzero(~outside)[0]
        for i in ins:
            axes = np.nonzero(d[i] >= d[i].max())[0]
            cands = []
            for a in axes:
                signs = (1.0,) if P[i, a] > 0 else (-1.0,) if P[i, a] < 0 else (-1.0, 1.0)
                for s in signs:
                    e = np.zeros(P.shape[1])
                    e[a] = s
                    cands.append(e)
            out[i] = _lex_min_rows(np.array(cands))
        return out

    def _poly_value(self, P):
        if self.dim == 1:
            lo, hi = self._lohi
            x = P[:, 0]
            return np.maximum(x - hi, lo - x)
        plane = P @ self._normals.T - self._offsets  # (m, n_edges)
        inside_val = plane.max(axis=-1)
        q, dist = self._nearest_on_edges(P)
        return np.where(inside_val > 0, dist, inside_val)

    def _poly_grad(self, P):
        if self.dim == 1:
            lo, hi = self._lohi
            x = P[:, 0]
            # tie x - hi == lo - x picks -1, the lexicographically smaller maximizer
            out = np.where(x - hi > lo - x, 1.0, -1.0)
            return out[:, None]
        plane = P @ self._normals.T - self._offsets
        inside_val = plane.max(axis=-1)
        outside = inside_val > 0
        out = np.zeros_like(P)
        if np.any(outside):
            q, dist = self._nearest_on_edges(P[outside])
            out[outside] = (P[outside] - q) / dist[:, None]
        ins = np.nonzero(~outside)[0]
        for i in ins:
            tied = np.nonzero(plane[i] >= plane[i].max())[0]
            out[i] = _lex_min_rows(self._normals[tied])
        return out

    def _nearest_on_edges(self, P):
        """Nearest boundary point over all edge segments; used for exterior points."""
        best_d = np.full(P.shape[0], np.inf)
        best_q = np.zeros_like(P)
        for A, B in self._segs:
            AB = B - A
            t = np.clip(((P - A) @ AB) / (AB @ AB), 0.0, 1.0)
            q = A + t[:, None] * AB
            d = np.linalg.norm(P - q, axis=-1)
            better = d < best_d
            best_d[better] = d[better]
            best_q[better] = q[better]
        return best_q, best_d

    def _sampled(self, P):
        """Sampled maximization of p.v - l(v) over unit v, with golden refinement."""
        b = self.body
        if self.dim == 1:
            la = float(b.support(np.array([1.0])))
            lb = float(b.support(np.array([-1.0])))
            x = P[:, 0]
            plus = x - la
            minus = -x - lb
            val = np.maximum(plus, minus)
            v = np.where(minus >= plus, -1.0, 1.0)  # ties pick -1, the smaller maximizer
            return val, v[:, None]
        thetas = np.linspace(0.0, 2 * np.pi, self.sample_count, endpoint=False)
        V = np.column_stack([np.cos(thetas), np.sin(thetas)])
        ell = b.support(V)
        scores = P @ V.T - ell
        k = np.argmax(scores, axis=1)
        width = 2 * np.pi / self.sample_count
        a = thetas[k] - width
        c = thetas[k] + width
        gr = (np.sqrt(5.0) - 1) / 2

        def g(t):
            vv = np.column_stack([np.cos(t), np.sin(t)])
            return np.sum(P * vv, axis=1) - b.support(vv)

        x1 = c - gr * (c - a)
        x2 = a + gr * (c - a)
        f1, f2 = g(x1), g(x2)
        for _ in range(48):
            keep_left = f1 >= f2
            c = np.where(keep_left, x2, c)
            a = np.where(keep_left, a, x1)
            x1 = c - gr * (c - a)
            x2 = a + gr * (c - a)
            f1, f2 = g(x1), g(x2)
        t = 0.5 * (a + c)
        v = np.column_stack([np.cos(t), np.sin(t)])
        return g(t), v

    def circumradius(self) -> float:
        return self.body.circumradius()

    def __repr__(self):
        return f"SupportConstraint({self.body!r})"


def analytic_constraint(kind: str, **params) -> Constraint:
    """Closed-form constraints: ball_norm(radius), ball_norm_squared(radius),
    ellipsoid_quadratic(A, c)."""
    if kind == "ball_norm":
        return BallNormConstraint(params["radius"])
    if kind == "ball_norm_squared":
        return BallNormSquaredConstraint(params["radius"])
    if kind == "ellipsoid_quadratic":
        return EllipsoidQuadraticConstraint(params["A"], params["c"])
    raise InvalidParameter(f"unknown analytic constraint kind {kind!r}")


def constraint_from_support(body, sample_count: int = 256) -> Constraint:
    """Constraint induced by a convex body through its support function."""
    c = SupportConstraint(body, sample_count)
    h0 = c.value(np.zeros(max(c.dim, 1)))
    if h0 >= 0:
        raise DegenerateBody(f"H(0) = {h0} >= 0; 0 must be interior to the body")
    return c


def surrogate(c: Constraint) -> Constraint:
    """A uniformly convex constraint with the same zero sublevel set as c.

    Returns c itself when it is already uniformly convex. Box and polytope
    gauges have no uniformly convex equivalent and raise NoSurrogate.
    """
    if isinstance(c, (BallNormSquaredConstraint, EllipsoidQuadraticConstraint)):
        return c
    if isinstance(c, BallNormConstraint):
        return BallNormSquaredConstraint(c.radius, provenance="surrogate")
    if isinstance(c, SupportConstraint):
        if isinstance(c.body, Ball):
            return BallNormSquaredConstraint(c.body.radius, provenance="surrogate", body=c.body)
        if isinstance(c.body, Ellipsoid):
            Ainv = np.linalg.inv(c.body.matrix)
            return EllipsoidQuadraticConstraint(0.5 * (Ainv + Ainv.T), 1.0,
                                                provenance="surrogate", body=c.body)
        raise NoSurrogate(f"no uniformly convex surrogate for {type(c.body).__name__} bodies")
    raise NoSurrogate(f"no surrogate rule for {type(c).__name__}")
