"""Penalty families b_eps approximating z -> (z/eps)^+.

Every family satisfies: b(z) = 0 for z <= 0, b > 0 for z > 0, b' >= 0,
b'' >= 0, and the exact linear tail b(z) = (z - eps)/eps for z >= 2 eps.
The default family blends with the quartic q(s) = 2 s^3 - s^4 on the
interval 0 < z < 2 eps (s = z / 2 eps), which joins both tails with
matching value, slope and curvature, so b is C^2. The alternative family
blends with s^2, which matches value and slope only (C^{1,1}); it exists
to confirm that the continuation limit does not depend on the family.

Evaluation, first and second derivatives are vectorized and stateless.
"""

from __future__ import annotations

import numpy as np

__all__ = ["PenaltyFn", "PolyBlendPenalty", "ShiftedQuadraticPenalty", "penalty_family"]


class PenaltyFn:
    """One member of a penalty family, at a fixed eps > 0."""

    name = "abstract"

    def __init__(self, eps: float):
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.eps = float(eps)

    def _blend(self, s):
        raise NotImplementedError

    def _blend1(self, s):
        raise NotImplementedError

    def _blend2(self, s):
        raise NotImplementedError

    def value(self, z):
        z = np.asarray(z, dtype=float)
        e = self.eps
        s = np.clip(z / (2 * e), 0.0, 1.0)
        out = np.where(z <= 0, 0.0, np.where(z >= 2 * e, (z - e) / e, self._blend(s)))
        return float(out) if out.ndim == 0 else out

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        e = self.eps
        s = np.clip(z / (2 * e), 0.0, 1.0)
        out = np.where(z <= 0, 0.0, np.where(z >= 2 * e, 1.0 / e, self._blend1(s) / (2 * e)))
        return float(out) if out.ndim == 0 else out

    def deriv2(self, z):
        z = np.asarray(z, dtype=float)
        e = self.eps
        s = np.clip(z / (2 * e), 0.0, 1.0)
        out = np.where(z <= 0, 0.0, np.where(z >= 2 * e, 0.0, self._blend2(s) / (4 * e * e)))
        return float(out) if out.ndim == 0 else out

    def __call__(self, z):
        return self.value(z)

    def __repr__(self):
        return f"{type(self).__name__}(eps={self.eps})"


class PolyBlendPenalty(PenaltyFn):
    """C^2 family: quartic blend 2 s^3 - s^4 between the zero and linear tails."""

    name = "poly_blend"

    def _blend(self, s):
        return 2 * s ** 3 - s ** 4

    def _blend1(self, s):
        return 6 * s ** 2 - 4 * s ** 3

    def _blend2(self, s):
        return 12 * s * (1 - s)


class ShiftedQuadraticPenalty(PenaltyFn):
    """C^{1,1} family: quadratic blend s^2; slope and value match at s = 1."""

    name = "shifted_quadratic"

    def _blend(self, s):
        return s ** 2

    def _blend1(self, s):
        return 2 * s

    def _blend2(self, s):
        return np.full_like(np.asarray(s, dtype=float), 2.0)


_FAMILIES = {
    "poly_blend": PolyBlendPenalty,
    "shifted_quadratic": ShiftedQuadraticPenalty,
}


def penalty_family(kind: str) -> type[PenaltyFn]:
    """Constructor for a named family; call the result with eps."""
    try:
        return _FAMILIES[kind]
    except KeyError:
        raise ValueError(f"unknown penalty family {kind!r}; options: {sorted(_FAMILIES)}") from None
