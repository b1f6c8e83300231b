"""Multivariate polynomials with exact first and second derivatives.

Custom functions enter scenarios only through these, so every closure in the
library has analytic derivatives available.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np


@dataclass(frozen=True)
class Polynomial:
    """Sum of ``coeff * prod(x_i ** exps_i)``.

    ``terms`` is a sequence of ``(coeff, exponents)`` pairs.  Value, gradient
    and Hessian are evaluated together from one stacked table of monomials.
    """

    dim: int
    terms: tuple = ()
    _coef: np.ndarray = field(init=False, repr=False, compare=False)
    _exps: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        terms = tuple((float(c), tuple(int(k) for k in e)) for c, e in self.terms)
        for _, e in terms:
            if len(e) != self.dim:
                raise ValueError(f"exponent tuple {e} does not match dimension {self.dim}")
            if min(e, default=0) < 0:
                raise ValueError(f"negative exponent in {e}")
        object.__setattr__(self, "terms", terms)

        n, m = self.dim, max(len(terms), 1)
        c = np.zeros(m)
        e = np.zeros((m, n), dtype=int)
        for i, (ci, ei) in enumerate(terms):
            c[i], e[i] = ci, ei
        pairs = list(combinations_with_replacement(range(n), 2))
        rows = 1 + n + len(pairs)
        coef = np.zeros((rows, m))
        exps = np.zeros((rows, m, n), dtype=int)
        coef[0], exps[0] = c, e
        for k in range(n):
            coef[1 + k] = c * e[:, k]
            exps[1 + k] = e
            exps[1 + k, :, k] -= 1
        for r, (k, l) in enumerate(pairs, start=1 + n):
            fac = e[:, k] * (e[:, k] - 1) if k == l else e[:, k] * e[:, l]
            coef[r] = c * fac
            exps[r] = e
            exps[r, :, k] -= 1
            exps[r, :, l] -= 1
        dead = exps < 0
        coef[dead.any(axis=2)] = 0.0
        exps[dead] = 0
        object.__setattr__(self, "_coef", coef)
        object.__setattr__(self, "_exps", exps)
        object.__setattr__(self, "_pairs", pairs)

    @classmethod
    def from_mapping(cls, dim, mapping):
        """Build from ``{exponent-tuple: coeff}``."""
        return cls(dim, tuple((c, e) for e, c in mapping.items()))

    @property
    def degree(self) -> int:
        return max((sum(e) for _, e in self.terms), default=0)

    def _table(self, x):
        x = np.asarray(x, dtype=float)
        mono = np.prod(np.power(x, self._exps), axis=2)
        return np.einsum("rm,rm->r", self._coef, mono)

    def all(self, x):
        """Return ``(value, gradient, hessian)`` at ``x``."""
        t = self._table(x)
        n = self.dim
        h = np.empty((n, n))
        for r, (k, l) in enumerate(self._pairs, start=1 + n):
            h[k, l] = h[l, k] = t[r]
        return float(t[0]), t[1:1 + n].copy(), h

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(self._coef[0] @ np.prod(np.power(x, self._exps[0]), axis=1))

    def grad(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = self.dim
        mono = np.prod(np.power(x, self._exps[1:1 + n]), axis=2)
        return np.einsum("rm,rm->r", self._coef[1:1 + n], mono)

    def hess(self, x) -> np.ndarray:
        return self.all(x)[2]

    def __add__(self, other: "Polynomial") -> "Polynomial":
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        acc: dict = {}
        for c, e in self.terms + other.terms:
            acc[e] = acc.get(e, 0.0) + c
        return Polynomial.from_mapping(self.dim, acc)

    def scaled(self, s: float) -> "Polynomial":
        return Polynomial(self.dim, tuple((s * c, e) for c, e in self.terms))
