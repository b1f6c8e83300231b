"""Explicit variation fields along a path.

A field is anything with ``count``, ``breakpoints`` and
``sample(ts, side) -> (W, dW/dt, d2W/dt2)`` returning coordinate arrays of
shape ``(len(ts), count, n)``.  ``side`` selects one-sided limits at
discontinuities.  The classes here build fields from scalar profiles times
constant coordinate vectors, which keeps every derivative exact.
"""

from __future__ import annotations

import numpy as np

from .dynamics import EventKind, ReflectedPath


class SineProfile:
    """``sin(k pi (t - a) / (b - a))`` on ``[a, b]``, zero elsewhere."""

    def __init__(self, k, a, b):
        self.k, self.a, self.b = k, float(a), float(b)
        self.breakpoints = (self.a, self.b)

    def eval(self, ts, side=1):
        w = self.k * np.pi / (self.b - self.a)
        s = w * (ts - self.a)
        inside = (ts > self.a) & (ts < self.b)
        inside |= (ts == self.a) & (side > 0)
        inside |= (ts == self.b) & (side < 0)
        f = np.where(inside, np.sin(s), 0.0)
        f1 = np.where(inside, w * np.cos(s), 0.0)
        f2 = np.where(inside, -w * w * np.sin(s), 0.0)
        return f, f1, f2


class FourierProfile:
    """``cos`` or ``sin`` of ``2 pi k t / T`` (smooth and ``T``-periodic)."""

    breakpoints = ()

    def __init__(self, k, period, kind="cos"):
        self.k, self.period, self.kind = k, float(period), kind

    def eval(self, ts, side=1):
        w = 2 * np.pi * self.k / self.period
        c, s = np.cos(w * ts), np.sin(w * ts)
        if self.kind == "cos":
            return c, -w * s, -w * w * c
        return s, w * c, -w * w * s


class BumpProfile:
    """``(1 - s^2)^3`` with ``s = (t - tau) / delta``; ``signed`` multiplies by ``sign(tau - t)``.

    The signed bump equals ``+1`` just before ``tau`` and ``-1`` just after.
    """

    def __init__(self, tau, delta, signed=False):
        self.tau, self.delta, self.signed = float(tau), float(delta), signed
        self.breakpoints = (self.tau - self.delta, self.tau, self.tau + self.delta)

    def eval(self, ts, side=1):
        d = self.delta
        s = (ts - self.tau) / d
        inside = np.abs(s) < 1
        q = 1 - s * s
        f = np.where(inside, q ** 3, 0.0)
        f1 = np.where(inside, -6 * s * q ** 2 / d, 0.0)
        f2 = np.where(inside, (-6 * q ** 2 + 24 * s * s * q) / d ** 2, 0.0)
        if self.signed:
            sgn = np.where(ts < self.tau, 1.0, np.where(ts > self.tau, -1.0, -float(np.sign(side))))
            f, f1, f2 = sgn * f, sgn * f1, sgn * f2
        return f, f1, f2


class PolynomialProfile:
    """Polynomial in ``t`` (numpy coefficient order, lowest first) on ``[a, b]``."""

    def __init__(self, coeffs, a, b):
        self.p = np.polynomial.Polynomial(coeffs)
        self.a, self.b = float(a), float(b)
        self.breakpoints = (self.a, self.b)

    def eval(self, ts, side=1):
        inside = (ts > self.a) & (ts < self.b)
        inside |= (ts == self.a) & (side > 0)
        inside |= (ts == self.b) & (side < 0)
        d1, d2 = self.p.deriv(1), self.p.deriv(2)
        return (np.where(inside, self.p(ts), 0.0), np.where(inside, d1(ts), 0.0), np.where(inside, d2(ts), 0.0))


class ProfileField:
    """Batch of fields ``sum_terms profile(t) * coef`` with ``coef`` of shape ``(count, n)``."""

    def __init__(self, dim, count, terms=()):
        self.dim = dim
        self.count = count
        self.terms = [(p, np.asarray(c, dtype=float).reshape(count, dim)) for p, c in terms]

    @property
    def breakpoints(self):
        return tuple(sorted({b for p, _ in self.terms for b in p.breakpoints}))

    def add(self, profile, coef):
        self.terms.append((profile, np.asarray(coef, dtype=float).reshape(self.count, self.dim)))
        return self

    def sample(self, ts, side=1):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = [np.zeros((ts.size, self.count, self.dim)) for _ in range(3)]
        for prof, coef in self.terms:
            for arr, f in zip(out, prof.eval(ts, side)):
                arr += f[:, None, None] * coef[None]
        return tuple(out)

    def __add__(self, other):
        if other.count != self.count:
            raise ValueError("batch sizes differ")
        return ProfileField(self.dim, self.count, self.terms + other.terms)

    def scaled(self, s):
        return ProfileField(self.dim, self.count, [(p, s * c) for p, c in self.terms])

    def select(self, i):
        return ProfileField(self.dim, 1, [(p, c[i:i + 1]) for p, c in self.terms])


class StackedField:
    """Concatenate the batches of several fields."""

    def __init__(self, *fields):
        self.fields = fields
        self.count = sum(f.count for f in fields)

    @property
    def breakpoints(self):
        return tuple(sorted({b for f in self.fields for b in f.breakpoints}))

    def sample(self, ts, side=1):
        parts = [f.sample(ts, side) for f in self.fields]
        return tuple(np.concatenate([p[i] for p in parts], axis=1) for i in range(3))


class CombinedField:
    """Linear combinations ``coeffs @ field`` of a batched field (``coeffs`` is ``(m_new, m)``)."""

    def __init__(self, field, coeffs):
        self.field = field
        self.coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        self.count = self.coeffs.shape[0]

    @property
    def breakpoints(self):
        return self.field.breakpoints

    def sample(self, ts, side=1):
        return tuple(np.einsum("am,tmn->tan", self.coeffs, a) for a in self.field.sample(ts, side))


def field_breakpoints(path: ReflectedPath, *fields, window=None):
    """Sorted cut times: window ends, events and field breakpoints inside the window."""
    a, b = (0.0, path.total_time) if window is None else map(float, window)
    cuts = {a, b}
    cuts.update(float(t) for t in path.event_times if a < t < b)
    for f in fields:
        cuts.update(float(t) for t in f.breakpoints if a < t < b)
    return np.array(sorted(cuts))


def random_admissible_field(path: ReflectedPath, rng, count=1, bc="fixed", modes=3, support=None,
                            normal_jumps=True, scale=1.0) -> ProfileField:
    """Random variation fields that satisfy the reflection jump conditions.

    A smooth base (sines vanishing at the support ends, or a Fourier series for
    periodic fields) is corrected near each reflection so that its normal part
    vanishes there, then a signed bump along ``N`` supplies a random normal
    component that flips sign across the event.
    """
    n = path.dim
    T = path.total_time
    a, b = (0.0, T) if support is None else map(float, support)
    fld = ProfileField(n, count)
    if bc == "periodic" and support is None:
        fld.add(FourierProfile(0, T), scale * rng.standard_normal((count, n)))
        for k in range(1, modes + 1):
            for kind in ("cos", "sin"):
                fld.add(FourierProfile(k, T, kind), scale * rng.standard_normal((count, n)) / k)
    else:
        for k in range(1, modes + 1):
            fld.add(SineProfile(k, a, b), scale * rng.standard_normal((count, n)) / k)
    refl = [e for e in path.events if e.kind is EventKind.REFLECTION and a < e.time < b]
    marks = [a] + [e.time for e in path.events if a < e.time < b] + [b]
    for e in refl:
        i = marks.index(e.time)
        delta = 0.45 * min(e.time - marks[i - 1], marks[i + 1] - e.time)
        base, _, _ = fld.sample(np.array([e.time]))
        gN = path.geom.g(e.point) @ e.normal
        b_n = base[0] @ gN
        fld.add(BumpProfile(e.time, delta), -np.outer(b_n, e.normal))
        if normal_jumps:
            zeta = scale * rng.standard_normal(count)
            fld.add(BumpProfile(e.time, delta, signed=True), np.outer(zeta, e.normal))
    return fld
