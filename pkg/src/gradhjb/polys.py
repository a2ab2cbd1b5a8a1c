"""Tiny polynomial expressions for config-file coefficients.

Grammar: a sum of terms, each term a '*'-separated product of numeric
literals and variables x1, x2, z with optional nonnegative integer powers
written as x1^2 or x1**2. Examples: "2", "1 + 0.5*x1", "x1^2*x2 - 3.5e-1*z".
No parentheses, no division, no negative powers. Evaluation is vectorized
over point arrays.
"""

from __future__ import annotations

import re

import numpy as np

__all__ = ["Poly", "PolyMatrix", "PolySigma", "PolyParseError"]


class PolyParseError(ValueError):
    pass


_VAR_RE = re.compile(r"^(x1|x2|z)(?:\^(\d+)|\*\*(\d+))?$")
_VARS = ("x1", "x2", "z")


def _split_terms(text: str):
    terms = []
    cur = ""
    prev = ""
    for ch in text:
        if ch in "+-" and cur.strip() and prev not in "eE*^+-":
            terms.append(cur)
            cur = ch
        else:
            cur += ch
        if not ch.isspace():
            prev = ch
    if cur.strip():
        terms.append(cur)
    return terms


class Poly:
    """Polynomial with explicit coefficients over (x1, x2, z)."""

    def __init__(self, terms: dict):
        self.terms = {tuple(k): float(v) for k, v in terms.items() if v != 0.0}

    @classmethod
    def constant(cls, value: float) -> "Poly":
        return cls({(0, 0, 0): float(value)})

    @classmethod
    def parse(cls, text: str, variables=("x1", "x2")) -> "Poly":
        text = text.strip()
        if not text:
            raise PolyParseError("empty expression")
        terms: dict = {}
        for raw in _split_terms(text):
            raw = raw.strip()
            sign = 1.0
            while raw and raw[0] in "+-":
                if raw[0] == "-":
                    sign = -sign
                raw = raw[1:].strip()
            if not raw:
                raise PolyParseError(f"dangling sign in {text!r}")
            coef = sign
            powers = [0, 0, 0]
            for factor in raw.replace("**", "^").split("*"):
                factor = factor.strip()
                if not factor:
                    raise PolyParseError(f"empty factor in {text!r}")
                m = _VAR_RE.match(factor)
                if m:
                    var = m.group(1)
                    if var not in variables:
                        raise PolyParseError(f"variable {var!r} not allowed here")
                    powers[_VARS.index(var)] += int(m.group(2) or m.group(3) or 1)
                    continue
                try:
                    coef *= float(factor)
                except ValueError:
                    raise PolyParseError(f"cannot parse factor {factor!r} in {text!r}") from None
            key = tuple(powers)
            terms[key] = terms.get(key, 0.0) + coef
        return cls(terms)

    def degree(self, var: str) -> int:
        i = _VARS.index(var)
        return max((k[i] for k in self.terms), default=0)

    @property
    def is_constant(self) -> bool:
        return all(k == (0, 0, 0) for k in self.terms)

    @property
    def x_independent(self) -> bool:
        return self.degree("x1") == 0 and self.degree("x2") == 0

    def __call__(self, pts, z=0.0):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x1 = pts[:, 0]
        x2 = pts[:, 1] if pts.shape[1] > 1 else np.zeros_like(x1)
        zv = np.broadcast_to(np.asarray(z, dtype=float), x1.shape)
        out = np.zeros_like(x1)
        for (i, j, k), c in self.terms.items():
            out = out + c * x1 ** i * x2 ** j * zv ** k
        return out

    def __repr__(self):
        if not self.terms:
            return "Poly(0)"
        bits = []
        for (i, j, k), c in sorted(self.terms.items()):
            factors = [f"{c:g}"]
            for var, p in zip(_VARS, (i, j, k)):
                if p == 1:
                    factors.append(var)
                elif p > 1:
                    factors.append(f"{var}^{p}")
            bits.append("*".join(factors))
        return f"Poly({' + '.join(bits)})"


class PolyMatrix:
    """Symmetric coefficient matrix with polynomial entries in x1, x2."""

    def __init__(self, entries):
        # entries: (p11,) for 1D or (p11, p12, p22) for 2D
        self.entries = tuple(entries)
        if len(self.entries) not in (1, 3):
            raise PolyParseError("need 1 (1D) or 3 (2D upper triangle) entries")

    @property
    def n(self) -> int:
        return 1 if len(self.entries) == 1 else 2

    @property
    def is_constant(self) -> bool:
        return all(p.is_constant for p in self.entries)

    def tables(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.column_stack([p(pts) for p in self.entries])


class PolySigma:
    """Full noise matrix with polynomial entries in x1, x2, z."""

    def __init__(self, entries):
        # entries: n x n nested sequence of Poly
        self.rows = tuple(tuple(row) for row in entries)
        self.n = len(self.rows)

    @property
    def is_constant(self) -> bool:
        # constancy in x; dependence on the control z is expected
        return all(p.x_independent for row in self.rows for p in row)

    def matrices(self, points: np.ndarray, z) -> np.ndarray:
        pts = np.atleast_2d(points)
        out = np.empty((pts.shape[0], self.n, self.n))
        for i, row in enumerate(self.rows):
            for j, p in enumerate(row):
                out[:, i, j] = p(pts, z=z)
        return out
