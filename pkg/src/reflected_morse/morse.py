"""Morse index theorems for reflected physical paths.

Fixed end points: the index of ``J''`` equals the number of conjugate points
in ``(0, T)`` counted with multiplicity.  Periodic orbits: the periodic index
equals the fixed-endpoint index at the base point plus the index of the
Hessian of ``x -> S(x, x)``, where ``S(x, y)`` is the action of the path from
``x`` to ``y`` near the orbit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import EventPolicy, IntegratorOptions, ReflectedPath, action, shoot, two_point_solve
from .errors import PreconditionError, SelfConjugateError
from .fields import random_admissible_field
from .index_form import BC, assemble_index_form, index_stability_scan, second_variation_matrix
from .jacobi import JacobiField, conjugate_points, endpoint_map, fundamental, self_conjugate_ratio

SELF_CONJUGATE_TOL = 1e-7


@dataclass
class FixedReport:
    index: int
    nullity: int
    conjugate_count: int
    endpoint_multiplicity: int
    conjugate_points: list
    passed: bool
    scan: list = field(default_factory=list)


def fixed_endpoint_index_theorem(path: ReflectedPath, k: int = 16, ks=None) -> FixedReport:
    """Compare the index of ``J''`` with the conjugate-point count in ``(0, T)``.

    With ``ks`` the index is recomputed for every ``k`` in ``ks`` and must not
    change (otherwise :class:`InconclusiveIndexError`).
    """
    T = path.total_time
    cps = conjugate_points(path)
    interior = sum(c.multiplicity for c in cps if c.time < T - 1e-9)
    at_end = sum(c.multiplicity for c in cps if c.time >= T - 1e-9)
    scan = []
    if ks:
        scan = index_stability_scan(path, ks, BC.FIXED)
        k = ks[0]
    rep = assemble_index_form(path, k, BC.FIXED, with_conjugates=False)
    return FixedReport(rep.index, rep.nullity, interior, at_end, cps, rep.index == interior, scan)


# ----------------------------------------------------------------------------------
# periodic orbits


def closure_defect(path: ReflectedPath) -> float:
    x0, v0 = path.state(0.0)
    xT, vT = path.final_state
    return float(max(np.max(np.abs(xT - x0)), np.max(np.abs(vT - v0))))


def rebase(path: ReflectedPath, t_base: float) -> ReflectedPath:
    """Same periodic orbit started at ``alpha(t_base)`` (which must not be an event)."""
    if np.any(np.abs(path.event_times - t_base) < 1e-12):
        raise PreconditionError("base point must not be an event time")
    x, v = path.state(t_base)
    before = int(np.sum(path.event_times < t_base))
    dec = path.decisions[before:] + path.decisions[:before]
    out = shoot(path.geom, path.surf, path.pot, x, v, path.total_time, EventPolicy.exact(dec), path.options)
    out.periodic = True
    return out


def default_base_time(path: ReflectedPath) -> float:
    """Midpoint of the first event-free segment."""
    seg = path.segments[0]
    return 0.5 * (seg.t0 + seg.t1)


@dataclass
class ActionHessian:
    base_point: np.ndarray
    h: float
    matrix: np.ndarray
    eigenvalues: np.ndarray
    index: int
    nullity: int
    noise: float
    ambiguous: bool
    action: float


def endpoint_action(path: ReflectedPath, x, y, options: Optional[IntegratorOptions] = None, tol: float = 1e-13):
    """``S(x, y)`` from the two-point solution seeded with ``path``'s velocity and decisions."""
    opts = options or path.options
    sol = two_point_solve(path.geom, path.surf, path.pot, x, y, path.v0, path.total_time,
                          EventPolicy.exact(path.decisions), opts, tol=tol)
    return action(sol)


def action_hessian(path: ReflectedPath, h: float = 1e-4, rtol_eig: float = 1e-7,
                   options: Optional[IntegratorOptions] = None) -> ActionHessian:
    """Hessian of ``x -> S(x, x)`` at ``p = alpha(0)`` by central differences.

    The stencil solves use tightened tolerances.  Eigenvalues below a noise
    floor estimated from the spread of the stencil actions are classified as
    zero; an eigenvalue within a factor 10 of that floor is flagged ambiguous.
    """
    opts = options or IntegratorOptions(method=path.options.method, rtol=1e-12, atol=1e-14,
                                        v_min=path.options.v_min, max_events=path.options.max_events)
    p = np.asarray(path.x0, dtype=float)
    if path.surf is not None and abs(path.surf.rho(p)) < 1e-6:
        raise PreconditionError("base point lies on the hypersurface")
    if self_conjugate_ratio(path) < SELF_CONJUGATE_TOL:
        raise SelfConjugateError("base point is conjugate to itself")
    n = p.size
    cache = {}

    def f(steps):
        key = tuple(steps)
        if key not in cache:
            x = p + h * np.asarray(steps, dtype=float)
            cache[key] = endpoint_action(path, x, x, opts)
        return cache[key]

    e = np.eye(n, dtype=int)
    zero = np.zeros(n, dtype=int)
    f0 = f(zero)
    H = np.empty((n, n))
    for i in range(n):
        H[i, i] = (f(e[i]) - 2 * f0 + f(-e[i])) / h ** 2
        for j in range(i):
            H[i, j] = H[j, i] = (f(e[i] + e[j]) - f(e[i] - e[j]) - f(-e[i] + e[j]) + f(-e[i] - e[j])) / (4 * h * h)
    lam = np.linalg.eigvalsh(H)
    # per-evaluation action noise with the stencil tolerances is ~1e-15 relative in practice;
    # 1e-14 keeps a safety factor of about ten
    noise = 64 * max(1e-15, 1e-14 * abs(f0)) / h ** 2
    tol = max(rtol_eig * float(np.max(np.abs(lam))), noise)
    index = int(np.sum(lam < -tol))
    nullity = int(np.sum(np.abs(lam) <= tol))
    ambiguous = bool(np.any((np.abs(lam) > tol) & (np.abs(lam) < 10 * tol)))
    return ActionHessian(p, h, H, lam, index, nullity, noise, ambiguous, f0)


@dataclass
class PeriodicReport:
    periodic_index: Optional[int]
    fixed_index: Optional[int]
    concavity_index: Optional[int]
    conjugate_count: int
    self_conjugate: bool
    closure: float
    passed: Optional[bool]
    periodic_nullity: Optional[int] = None
    hessian: Optional[ActionHessian] = None
    fixed: Optional[FixedReport] = None
    ambiguous: bool = False
    notes: list = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return self.self_conjugate


def periodic_index_theorem(path: ReflectedPath, k: int = 16, h: float = 1e-4, ks=None,
                           closure_tol: float = 1e-7) -> PeriodicReport:
    """Check ``periodic index = fixed index + ind Hess S(x, x)`` at ``p = alpha(0)``.

    A self-conjugate base point is reported as degenerate and the identity is
    not asserted.
    """
    closure = closure_defect(path)
    if closure > closure_tol:
        raise PreconditionError(f"path is not closed (defect {closure:.2e})")
    if path.surf is not None and abs(path.surf.rho(path.x0)) < 1e-6:
        raise PreconditionError("base point lies on the hypersurface")
    ratio = self_conjugate_ratio(path)
    cps = conjugate_points(path)
    count = sum(c.multiplicity for c in cps if c.time < path.total_time - 1e-9)
    if ratio < SELF_CONJUGATE_TOL:
        return PeriodicReport(None, None, None, count, True, closure, None,
                              notes=[f"base point self-conjugate (sigma ratio {ratio:.2e})"])
    if ks:
        index_stability_scan(path, ks, BC.PERIODIC)
        k = ks[0]
    per = assemble_index_form(path, k, BC.PERIODIC, with_conjugates=False)
    fixed = fixed_endpoint_index_theorem(path, k, ks)
    hess = action_hessian(path, h)
    passed = per.index == fixed.index + hess.index
    notes = []
    if hess.ambiguous:
        notes.append("action Hessian has an eigenvalue close to the noise floor")
    return PeriodicReport(per.index, fixed.index, hess.index, count, False, closure, passed, per.nullity,
                          hess, fixed, hess.ambiguous, notes)


def closed_jacobi_field(path: ReflectedPath, w) -> JacobiField:
    """Jacobi field with ``W(0) = W(T) = w`` (requires ``B(T)`` invertible)."""
    w = np.asarray(w, dtype=float).reshape(path.dim, -1)
    if self_conjugate_ratio(path) < SELF_CONJUGATE_TOL:
        raise SelfConjugateError("base point is conjugate to itself")
    phi = endpoint_map(path)
    n = path.dim
    A, B = phi.matrix[:n, :n], phi.matrix[:n, n:]
    P0 = np.linalg.solve(B, w - A @ w)
    flow = fundamental(path)
    dx, dv = flow.to_coordinates(0.0, w, P0)
    return JacobiField(path, np.vstack([dx, dv]))


def splitting_orthogonality_check(path: ReflectedPath, rng, pairs: int = 20, w=None, Z=None) -> float:
    """``max |J''(W, Z)|`` for closed Jacobi fields ``W`` and fields ``Z`` vanishing at the base point."""
    n = path.dim
    ws = rng.standard_normal((n, pairs)) if w is None else np.asarray(w, dtype=float).reshape(n, -1)
    if not np.any(ws):
        return 0.0
    W = closed_jacobi_field(path, ws)
    if Z is None:
        Z = random_admissible_field(path, rng, count=W.count, bc="fixed")
    M = second_variation_matrix(path, W, Z, BC.PERIODIC)
    return float(np.max(np.abs(np.diag(M)))) if M.shape[0] == M.shape[1] else float(np.max(np.abs(M)))
