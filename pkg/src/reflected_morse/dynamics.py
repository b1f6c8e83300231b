"""Reflected physical paths.

Between events a path solves the mechanical equation
``x'' + Gamma(x', x') + g^{-1} dV = 0``.  Crossings of ``Y`` are located on the
dense output of the integrator and resolved by the event policy into a
reflection (normal velocity flipped) or a transmission (recorded as a kink,
velocity unchanged).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (
    ConjugateEndpointError,
    IntegrationError,
    MaxEventsExceeded,
    NewtonDivergenceError,
    PolicyError,
    PreconditionError,
    TangencyError,
)
from .geometry import (
    TOL_Y,
    ChartGeometry,
    HypersurfaceSpec,
    PotentialSpec,
    _christoffel_from,
    connection_data,
    unit_normal,
)

V_MIN = 1e-6
MAX_EVENTS = 64


class EventKind(str, enum.Enum):
    REFLECTION = "reflection"
    KINK = "kink"


class Decision(str, enum.Enum):
    REFLECT = "reflect"
    TRANSMIT = "transmit"


class Overflow(str, enum.Enum):
    ERROR_ON_EXTRA = "error"
    ALWAYS_REFLECT = "reflect"
    ALWAYS_TRANSMIT = "transmit"


@dataclass(frozen=True)
class EventPolicy:
    """Decisions consumed in order at successive crossings of ``Y``."""

    decisions: tuple = ()
    overflow: Overflow = Overflow.ALWAYS_REFLECT

    def __post_init__(self):
        object.__setattr__(self, "decisions", tuple(Decision(d) for d in self.decisions))
        object.__setattr__(self, "overflow", Overflow(self.overflow))

    @classmethod
    def reflect_all(cls):
        return cls((), Overflow.ALWAYS_REFLECT)

    @classmethod
    def transmit_all(cls):
        return cls((), Overflow.ALWAYS_TRANSMIT)

    @classmethod
    def exact(cls, decisions):
        """Exactly these decisions; an extra crossing is an error."""
        return cls(tuple(decisions), Overflow.ERROR_ON_EXTRA)

    def decision(self, i: int) -> Decision:
        if i < len(self.decisions):
            return self.decisions[i]
        if self.overflow is Overflow.ERROR_ON_EXTRA:
            raise PolicyError(f"policy exhausted at crossing {i + 1} ({len(self.decisions)} decisions given)")
        return Decision.REFLECT if self.overflow is Overflow.ALWAYS_REFLECT else Decision.TRANSMIT

    def check_boundary(self, boundary: bool):
        if not boundary:
            return
        if Decision.TRANSMIT in self.decisions or self.overflow is Overflow.ALWAYS_TRANSMIT:
            raise PolicyError("transmission through a boundary hypersurface is not allowed")


@dataclass(frozen=True)
class IntegratorOptions:
    method: str = "DOP853"
    rtol: float = 1e-10
    atol: float = 1e-12
    v_min: float = V_MIN
    max_events: int = MAX_EVENTS
    tol_y: float = TOL_Y


@dataclass(frozen=True)
class EventRecord:
    time: float
    point: np.ndarray
    v_in: np.ndarray
    v_out: np.ndarray
    kind: EventKind
    normal: np.ndarray
    normal_speed: float = 0.0


# ----------------------------------------------------------------------------------
# equations of motion


class Mechanics:
    """Coefficients of the equation of motion and of its linearization."""

    def __init__(self, geom: ChartGeometry, pot: PotentialSpec):
        self.geom = geom
        self.pot = pot
        self.n = geom.dim

    def force(self, x):
        """``(ginv, gamma, g^{-1} dV)`` at ``x``."""
        if self.geom.frame is not None:
            c = self.geom.frame(x)
            ginv, gam = c["ginv"], c["gam"]
        else:
            ginv = self.geom.g_inv(x)
            gam = _christoffel_from(ginv, self.geom.dg(x))
        return ginv, gam, ginv @ np.asarray(self.pot.grad_v(x), dtype=float)

    def accel(self, x, v):
        _, gam, gv = self.force(x)
        return -np.einsum("kij,i,j->k", gam, v, v) - gv

    def coefficients(self, x, side=1):
        """Everything the Jacobi operator needs at ``x``.

        Returns a dict with ``g``, ``ginv``, ``gam``, ``dgam`` (``[l,k,i,j]``),
        ``dv`` (covector), ``hv`` (coordinate Hessian on ``side``).
        """
        c = dict(connection_data(self.geom, x))
        c["dv"] = np.asarray(self.pot.grad_v(x), dtype=float)
        c["hv"] = self.pot.hess(x, side)
        return c

    def linearization(self, x, v, side=1, c=None):
        """``(Kx, Kv)`` with ``d/dt dv = -Kx dx - Kv dv`` for the coordinate variation."""
        c = self.coefficients(x, side) if c is None else c
        ginv = c["ginv"]
        dginv = -np.einsum("ka,lab,bm->lkm", ginv, c["dg"], ginv)
        kx = (
            np.einsum("lkij,i,j->kl", c["dgam"], v, v)
            + np.einsum("lkm,m->kl", dginv, c["dv"])
            + ginv @ c["hv"]
        )
        kv = 2.0 * np.einsum("kij,i->kj", c["gam"], v)
        return kx, kv


# ----------------------------------------------------------------------------------
# paths


@dataclass
class Segment:
    t0: float
    t1: float
    sol: object  # scipy OdeSolution over [t0, t1]
    side: int
    x0: np.ndarray
    v0: np.ndarray


@dataclass
class ReflectedPath:
    geom: ChartGeometry
    surf: Optional[HypersurfaceSpec]
    pot: PotentialSpec
    x0: np.ndarray
    v0: np.ndarray
    total_time: float
    segments: list
    events: list
    policy: EventPolicy
    options: IntegratorOptions
    periodic: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.geom.dim

    @property
    def event_times(self) -> np.ndarray:
        return np.array([e.time for e in self.events])

    @property
    def decisions(self) -> tuple:
        return tuple(Decision.REFLECT if e.kind is EventKind.REFLECTION else Decision.TRANSMIT for e in self.events)

    def segment_index(self, t: float, side: int = 1) -> int:
        """Segment containing ``t``; at an event ``side`` picks the left (-1) or right (+1) one."""
        bounds = [s.t1 for s in self.segments[:-1]]
        if side > 0:
            return int(np.searchsorted(bounds, t, side="right"))
        return int(np.searchsorted(bounds, t, side="left"))

    def state(self, t: float, side: int = 1):
        """``(x, v)`` at ``t`` (one-sided at events)."""
        seg = self.segments[self.segment_index(t, side)]
        y = seg.sol(t)
        n = self.dim
        return y[:n].copy(), y[n:2 * n].copy()

    def states(self, ts, side: int = 1):
        ts = np.asarray(ts, dtype=float)
        n = self.dim
        xs = np.empty((ts.size, n))
        vs = np.empty((ts.size, n))
        for i, t in enumerate(ts):
            xs[i], vs[i] = self.state(t, side)
        return xs, vs

    def side_at(self, t: float, side: int = 1) -> int:
        return self.segments[self.segment_index(t, side)].side

    @property
    def final_state(self):
        return self.state(self.total_time, -1)

    def energy(self, t: float, side: int = 1) -> float:
        x, v = self.state(t, side)
        return 0.5 * float(v @ self.geom.g(x) @ v) + float(self.pot.v(x))

    def energy_drift(self, samples: int = 200) -> float:
        """Largest relative deviation of the energy from its initial value."""
        e0 = self.energy(0.0)
        ts = np.linspace(0.0, self.total_time, samples)
        pts = [(t, 1) for t in ts] + [(e.time, s) for e in self.events for s in (-1, 1)]
        worst = max(abs(self.energy(t, s) - e0) for t, s in pts)
        return worst / max(abs(e0), 1e-300) if e0 != 0 else worst

    def continuity_gap(self) -> float:
        gap = 0.0
        for e in self.events:
            xl, _ = self.state(e.time, -1)
            xr, _ = self.state(e.time, 1)
            gap = max(gap, float(np.max(np.abs(xl - xr))), float(np.max(np.abs(xl - e.point))))
        return gap


def _side_of(surf, x) -> int:
    if surf is None:
        return 1
    return 1 if surf.rho(x) >= 0 else -1


def reflect_velocity(geom: ChartGeometry, surf: HypersurfaceSpec, y, v_in, v_min: float = V_MIN) -> np.ndarray:
    """``v_out = v_in - 2 <v_in, N> N``; raises :class:`TangencyError` on grazing incidence."""
    y = np.asarray(y, dtype=float)
    v_in = np.asarray(v_in, dtype=float)
    n = unit_normal(geom, surf, y)
    vn = geom.inner(y, v_in, n)
    if abs(vn) <= v_min:
        raise TangencyError(f"normal speed {vn:.3e} below v_min={v_min:g} at {y.tolist()}")
    return v_in - 2.0 * vn * n


def integrate_segment(mech: Mechanics, surf, state, t_span, options: IntegratorOptions = IntegratorOptions(),
                      side: Optional[int] = None):
    """Integrate from ``state = (x, v)`` over ``t_span`` and stop at the first crossing of ``Y``.

    Returns ``(sol, t_end, crossing)`` where ``crossing`` is ``None`` or the
    ``(time, point, velocity)`` of the located crossing.  ``side`` is the sign
    of ``rho`` on the side being left; it defaults to the side of ``x`` (or, for
    a start on ``Y``, the side the velocity points into).
    """
    x0, v0 = (np.asarray(a, dtype=float) for a in state)
    n = mech.n
    t0, t1 = map(float, t_span)

    def rhs(t, y):
        x, v = y[:n], y[n:]
        return np.concatenate([v, mech.accel(x, v)])

    events = None
    if surf is not None:
        if side is None:
            r0 = surf.rho(x0)
            if abs(r0) < options.tol_y:
                side = 1 if mech.geom.inner(x0, v0, unit_normal(mech.geom, surf, x0)) >= 0 else -1
            else:
                side = 1 if r0 > 0 else -1

        def crossing(t, y):
            return side * surf.rho(y[:n])

        def turning(t, y):
            # zero at extrema of side * rho; rising through zero at its minima
            return side * float(np.asarray(surf.grad_rho(y[:n])) @ y[n:])

        crossing.terminal = True
        crossing.direction = -1
        turning.direction = 1
        events = [crossing, turning]

    sol = solve_ivp(rhs, (t0, t1), np.concatenate([x0, v0]), method=options.method,
                    rtol=options.rtol, atol=options.atol, dense_output=True, events=events)
    if sol.status < 0:
        raise IntegrationError(sol.message)
    hit = None
    if sol.status == 1:
        te = float(sol.t_events[0][0])
        ye = sol.y_events[0][0]
        hit = (te, ye[:n].copy(), ye[n:].copy())
    if surf is not None:
        missed = _missed_crossing(sol, surf, side, t0, n, hit)
        if missed is not None:
            hit = missed
    if hit is not None:
        return sol.sol, hit[0], hit
    return sol.sol, t1, None


def _missed_crossing(sol, surf, side, t0, n, hit):
    """Crossing hidden inside one solver step, found from a minimum of ``side * rho`` below zero."""
    t_hit = np.inf if hit is None else hit[0]

    def f(t):
        return side * surf.rho(sol.sol(t)[:n])

    for t_min in sol.t_events[1]:
        if t_min >= t_hit:
            break
        if f(t_min) >= 0:
            continue
        # side * rho decreases on [t_lo, t_min]; step back until it is positive
        t_lo = t_min
        span = max(t_min - t0, 0.0)
        for frac in (1e-3, 1e-2, 1e-1, 1.0):
            t_lo = t_min - frac * span
            if f(t_lo) > 0:
                break
        else:
            continue
        te = brentq(f, t_lo, t_min, xtol=1e-14, rtol=4 * np.finfo(float).eps)
        y = sol.sol(te)
        return te, y[:n].copy(), y[n:].copy()
    return None


def _run(geom, surf, pot, x0, v0, T, policy, options, transition=None) -> ReflectedPath:
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if surf is not None:
        policy.check_boundary(surf.boundary)
        if abs(surf.rho(x0)) < options.tol_y:
            raise PreconditionError("initial point lies on the hypersurface")
    mech = Mechanics(geom, pot)
    segments, events = [], []
    t, x, v = 0.0, x0, v0
    side = _side_of(surf, x0)
    while True:
        sol, t_end, hit = integrate_segment(mech, surf, (x, v), (t, T), options, side=side)
        segments.append(Segment(t, t_end, sol, side, x, v))
        if hit is None or t_end >= T:
            break
        if len(events) >= options.max_events:
            raise MaxEventsExceeded(f"more than {options.max_events} events before T={T}")
        te, xe, ve = hit
        nrm = unit_normal(geom, surf, xe)
        vn = geom.inner(xe, ve, nrm)
        if abs(vn) <= options.v_min:
            raise TangencyError(f"grazing crossing at t={te:.6g} (normal speed {vn:.3e})")
        choice = policy.decision(len(events))
        if choice is Decision.REFLECT:
            vout = ve - 2.0 * vn * nrm
            kind = EventKind.REFLECTION
        else:
            vout = ve.copy()
            kind = EventKind.KINK
        if transition is not None:
            vout = transition(len(events), kind, xe, ve, vout)
        events.append(EventRecord(te, xe, ve, vout, kind, nrm, float(vn)))
        side = 1 if geom.inner(xe, vout, nrm) >= 0 else -1
        t, x, v = te, xe, vout
    return ReflectedPath(geom, surf, pot, x0, v0, float(T), segments, events, policy, options)


def shoot(geom: ChartGeometry, surf: Optional[HypersurfaceSpec], pot: PotentialSpec, x0, v0, T: float,
          policy: EventPolicy = EventPolicy.reflect_all(), options: IntegratorOptions = IntegratorOptions()
          ) -> ReflectedPath:
    """Reflected physical path with initial data ``(x0, v0)`` on ``[0, T]``."""
    return _run(geom, surf, pot, x0, v0, T, policy, options)


def reversed_path(path: ReflectedPath) -> ReflectedPath:
    """Shoot backward from ``(alpha(T), -alpha'(T))`` with the decisions reversed."""
    x, v = path.final_state
    pol = EventPolicy.exact(tuple(reversed(path.decisions)))
    return shoot(path.geom, path.surf, path.pot, x, -v, path.total_time, pol, path.options)


# ----------------------------------------------------------------------------------
# action and first variation

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _gauss_points(a, b, nodes=_GL_NODES, weights=_GL_WEIGHTS):
    half = 0.5 * (b - a)
    return a + half * (nodes + 1.0), half * weights


def action(path: ReflectedPath) -> float:
    """Action ``sum_i int (|v|^2/2 - V) dt`` by 8-point Gauss-Legendre on every solver step."""
    n = path.dim
    total = 0.0
    for seg in path.segments:
        steps = np.asarray(seg.sol.ts)
        for a, b in zip(steps[:-1], steps[1:]):
            lo, hi = min(a, b), max(a, b)
            if hi <= lo:
                continue
            ts, ws = _gauss_points(lo, hi)
            ys = seg.sol(ts)
            for j in range(ts.size):
                x, v = ys[:n, j], ys[n:2 * n, j]
                total += ws[j] * (0.5 * float(v @ path.geom.g(x) @ v) - float(path.pot.v(x)))
    return total


def equation_residual(path: ReflectedPath, t: float, h: float = 1e-4) -> np.ndarray:
    """``D_t v + grad V`` at ``t``, with ``dv/dt`` from central differences of the dense output."""
    seg = path.segments[path.segment_index(t)]
    n = path.dim
    y = seg.sol(t)
    x, v = y[:n], y[n:2 * n]
    vdot = (seg.sol(t + h)[n:2 * n] - seg.sol(t - h)[n:2 * n]) / (2 * h)
    mech = Mechanics(path.geom, path.pot)
    ginv, gam, gv = mech.force(x)
    return vdot + np.einsum("kij,i,j->k", gam, v, v) + gv


def first_variation(path: ReflectedPath, probe, quad_per_segment: int = 16) -> np.ndarray:
    """First variation of the action along each member of a batched ``probe`` field."""
    from .fields import field_breakpoints

    g = path.geom
    cuts = field_breakpoints(path, probe)
    total = None
    for a, b in zip(cuts[:-1], cuts[1:]):
        for lo, hi in zip(np.linspace(a, b, quad_per_segment + 1)[:-1], np.linspace(a, b, quad_per_segment + 1)[1:]):
            ts, ws = _gauss_points(lo, hi)
            Z, _, _ = probe.sample(ts, 1)
            for j, t in enumerate(ts):
                x, _ = path.state(t)
                r = equation_residual(path, t)
                term = -ws[j] * (Z[j] @ (g.g(x) @ r))
                total = term if total is None else total + term
    for e in path.events:
        zl, _, _ = probe.sample(np.array([e.time]), -1)
        zr, _, _ = probe.sample(np.array([e.time]), 1)
        zbar = 0.5 * (zl[0] + zr[0])
        dv = e.v_out - e.v_in
        total = total - zbar @ (g.g(e.point) @ dv)
    return np.atleast_1d(total)


def criticality_residual(path: ReflectedPath, probes) -> float:
    """Largest ``|J'(Z)|`` over a batched probe field (zero for a physical path)."""
    return float(np.max(np.abs(first_variation(path, probes)))) if probes.count else 0.0


# ----------------------------------------------------------------------------------
# two-point boundary problem


def two_point_solve(geom: ChartGeometry, surf, pot: PotentialSpec, x, y, v_guess, T: float,
                    policy: EventPolicy = EventPolicy.reflect_all(),
                    options: IntegratorOptions = IntegratorOptions(),
                    tol: float = 1e-10, max_iter: int = 50, max_halvings: int = 8,
                    singular_tol: float = 1e-7) -> ReflectedPath:
    """Path from ``x`` to ``y`` in time ``T`` by Newton on the initial velocity.

    The derivative of ``v -> alpha_{x,v}(T)`` is the ``W(0)=0`` block of the
    Jacobi endpoint map.  The step is halved (up to ``max_halvings`` times)
    while the endpoint miss does not decrease.
    """
    from .jacobi import b_scale, fundamental

    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    v = np.asarray(v_guess, dtype=float).copy()
    n = x.size
    path = shoot(geom, surf, pot, x, v, T, policy, options)
    miss = path.final_state[0] - y
    for _ in range(max_iter):
        if np.max(np.abs(miss)) < tol:
            return path
        F = fundamental(path).matrix(T, -1)
        B = F[:n, n:]
        sv = np.linalg.svd(B, compute_uv=False)
        ratio = sv[-1] / max(sv[0], b_scale(path))
        if ratio <= singular_tol:
            raise ConjugateEndpointError(f"endpoint map singular (relative sigma_min {ratio:.2e})")
        step = -np.linalg.solve(B, miss)
        lam = 1.0
        for _ in range(max_halvings + 1):
            try:
                trial = shoot(geom, surf, pot, x, v + lam * step, T, policy, options)
                tmiss = trial.final_state[0] - y
                if np.linalg.norm(tmiss) < np.linalg.norm(miss):
                    break
            except (TangencyError, PolicyError, MaxEventsExceeded, IntegrationError):
                pass
            lam *= 0.5
        else:
            raise NewtonDivergenceError("damped Newton step failed to reduce the endpoint miss")
        v = v + lam * step
        path, miss = trial, tmiss
    if np.max(np.abs(miss)) < tol:
        return path
    sv = np.linalg.svd(fundamental(path).matrix(T, -1)[:n, n:], compute_uv=False)
    ratio = sv[-1] / max(sv[0], b_scale(path))
    if ratio <= 1e3 * singular_tol:
        raise ConjugateEndpointError(f"Newton stalled at a nearly singular endpoint map "
                                     f"(relative sigma_min {ratio:.2e})")
    raise NewtonDivergenceError(f"no convergence after {max_iter} iterations (miss {np.max(np.abs(miss)):.2e})")
