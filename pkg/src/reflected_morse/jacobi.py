"""Reflected Jacobi fields, the endpoint map and conjugate points.

Jacobi fields are propagated as coordinate variations ``(dx, dv)`` of the
path, which is the chart form of the Jacobi equation; the covariant pair is
``W = dx``, ``D_t W = dv + Gamma(v, dx)``.  At a reflection the covariant jump

* ``dc = -(W_1 / a_1) a_T + W_T``,
* ``W+ = W_T - W_1 N``,
* ``(D_t W)_T+ = (D_t W)_T- + 2 a_1 S(dc)``,
* ``(D_t W)_1+ = 2 (-(W_1 / a_1) <grad V, N> + II(dc, a_T)) - (D_t W)_1-``

is applied, where ``a = v_in``, ``a_1 = <a, N>`` and ``a_T`` is its tangential
part.  Kinks leave ``(W, D_t W)`` unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .dynamics import EventKind, EventPolicy, Mechanics, ReflectedPath, shoot
from .errors import IntegrationError, RefineGridError, TangencyError
from .geometry import _christoffel_from, normal_derivative, unit_normal


def _gamma(path, x):
    return _christoffel_from(path.geom.g_inv(x), path.geom.dg(x))


def jacobi_jump(geom, surf, pot, event, W_minus, DW_minus, v_min: float = 1e-6):
    """Covariant jump of a Jacobi field at ``event``.

    ``W_minus`` and ``DW_minus`` may be vectors or ``(n, m)`` column stacks.
    Returns ``(W_plus, DW_plus, dc)``; ``dc`` is the tangent variation of the
    impact point (zero at kinks).
    """
    W = np.asarray(W_minus, dtype=float)
    P = np.asarray(DW_minus, dtype=float)
    if event.kind is EventKind.KINK:
        return W.copy(), P.copy(), np.zeros_like(W)
    y = event.point
    g = geom.g(y)
    nrm = unit_normal(geom, surf, y)
    a = event.v_in
    a1 = float(a @ g @ nrm)
    if abs(a1) <= v_min:
        raise TangencyError(f"normal speed {a1:.3e} at reflection t={event.time:.6g}")
    a_top = a - a1 * nrm
    vec = W.ndim == 1
    W2 = W.reshape(W.shape[0], -1)
    P2 = P.reshape(P.shape[0], -1)
    ng = nrm @ g
    w1 = ng @ W2
    w_top = W2 - np.outer(nrm, w1)
    dc = -np.outer(a_top, w1 / a1) + w_top
    shape = -normal_derivative(geom, surf, y)  # S(u) = shape @ u
    s_dc = shape @ dc
    p1 = ng @ P2
    p_top = P2 - np.outer(nrm, p1)
    dv_n = float(np.asarray(pot.grad_v(y), dtype=float) @ nrm)
    ii = a_top @ g @ s_dc
    p1_bar = -(w1 / a1) * dv_n + ii
    W_plus = w_top - np.outer(nrm, w1)
    P_plus = p_top + 2.0 * a1 * s_dc + np.outer(nrm, 2.0 * p1_bar - p1)
    if vec:
        return W_plus[:, 0], P_plus[:, 0], dc[:, 0]
    return W_plus, P_plus, dc


def coordinate_jump(path: ReflectedPath, event) -> np.ndarray:
    """``2n x 2n`` matrix acting on coordinate variations ``(dx, dv)`` at ``event``."""
    n = path.dim
    gam = _gamma(path, event.point)
    eye = np.eye(2 * n)
    W = eye[:n]
    P = eye[n:] + np.einsum("kij,i,jm->km", gam, event.v_in, W)
    Wp, Pp, _ = jacobi_jump(path.geom, path.surf, path.pot, event, W, P, path.options.v_min)
    dvp = Pp - np.einsum("kij,i,jm->km", gam, event.v_out, Wp)
    return np.vstack([Wp, dvp])


# ----------------------------------------------------------------------------------
# fundamental matrix


class Flow:
    """Path re-integrated together with its coordinate fundamental matrix.

    ``matrix(t)`` maps coordinate variations at ``t = 0`` to those at ``t``,
    with all event jumps applied.
    """

    def __init__(self, path: ReflectedPath, sols, jumps):
        self.path = path
        self.sols = sols
        self.jumps = jumps
        self.n = path.dim
        self.mech = Mechanics(path.geom, path.pot)

    def _eval(self, t, side):
        i = self.path.segment_index(t, side)
        return i, self.sols[i](t)

    def state(self, t, side=1):
        _, y = self._eval(t, side)
        n = self.n
        return y[:n], y[n:2 * n]

    def matrix(self, t, side=1) -> np.ndarray:
        _, y = self._eval(t, side)
        n = self.n
        return y[2 * n:].reshape(2 * n, 2 * n)

    def evaluate(self, ts, side=1):
        """``(x, v, F, seg_index)`` for an array of times."""
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        n = self.n
        xs = np.empty((ts.size, n))
        vs = np.empty((ts.size, n))
        Fs = np.empty((ts.size, 2 * n, 2 * n))
        idx = np.array([self.path.segment_index(t, side) for t in ts], dtype=int)
        for i in np.unique(idx):
            mask = idx == i
            y = self.sols[i](ts[mask])
            y = y.reshape(y.shape[0], -1)
            xs[mask] = y[:n].T
            vs[mask] = y[n:2 * n].T
            Fs[mask] = y[2 * n:].T.reshape(-1, 2 * n, 2 * n)
        return xs, vs, Fs, idx

    def to_coordinates(self, t, W, DW, side=1):
        """Covariant ``(W, D_t W)`` at ``t`` to coordinate ``(dx, dv)``."""
        x, v = self.state(t, side)
        gam = _gamma(self.path, x)
        W = np.asarray(W, dtype=float)
        return W, np.asarray(DW, dtype=float) - np.einsum("kij,i,j...->k...", gam, v, W)

    def covariant_frame(self, t, side=1) -> np.ndarray:
        """Matrix ``C`` with ``(W, D_t W) = C (dx, dv)`` at ``t``."""
        x, v = self.state(t, side)
        n = self.n
        C = np.eye(2 * n)
        C[n:, :n] = np.einsum("kij,i->kj", _gamma(self.path, x), v)
        return C


def fundamental(path: ReflectedPath) -> Flow:
    """Cached :class:`Flow` of ``path``."""
    flow = path._cache.get("flow")
    if flow is not None:
        return flow
    n = path.dim
    mech = Mechanics(path.geom, path.pot)
    opts = path.options
    sols, jumps = [], []
    F = np.eye(2 * n)
    for i, seg in enumerate(path.segments):
        if i > 0:
            J = coordinate_jump(path, path.events[i - 1])
            jumps.append(J)
            F = J @ F
        side = seg.side

        def rhs(t, y, side=side):
            x, v = y[:n], y[n:2 * n]
            c = mech.coefficients(x, side)
            ginv, gam = c["ginv"], c["gam"]
            acc = -np.einsum("kij,i,j->k", gam, v, v) - ginv @ c["dv"]
            kx, kv = mech.linearization(x, v, side, c)
            Phi = y[2 * n:].reshape(2 * n, 2 * n)
            dPhi = np.vstack([Phi[n:], -kx @ Phi[:n] - kv @ Phi[n:]])
            return np.concatenate([v, acc, dPhi.ravel()])

        y0 = np.concatenate([seg.x0, seg.v0, F.ravel()])
        if seg.t1 > seg.t0:
            sol = solve_ivp(rhs, (seg.t0, seg.t1), y0, method=opts.method, rtol=opts.rtol,
                            atol=opts.atol, dense_output=True)
            if sol.status < 0:
                raise IntegrationError(sol.message)
            dense = sol.sol
            F = sol.y[2 * n:, -1].reshape(2 * n, 2 * n)
        else:
            dense = _Constant(y0)
        sols.append(dense)
    flow = Flow(path, sols, jumps)
    path._cache["flow"] = flow
    return flow


class _Constant:
    def __init__(self, y):
        self.y = y

    def __call__(self, t):
        t = np.asarray(t)
        return self.y if t.ndim == 0 else np.repeat(self.y[:, None], t.size, axis=1)


# ----------------------------------------------------------------------------------
# Jacobi fields


class JacobiField:
    """Batch of reflected Jacobi fields along a path.

    ``y0`` holds the coordinate initial variations as columns, shape ``(2n, m)``.
    """

    breakpoints = ()

    def __init__(self, path: ReflectedPath, y0):
        self.path = path
        self.flow = fundamental(path)
        self.y0 = np.asarray(y0, dtype=float).reshape(2 * path.dim, -1)

    @property
    def count(self) -> int:
        return self.y0.shape[1]

    def coordinates(self, ts, side=1):
        xs, vs, Fs, idx = self.flow.evaluate(ts, side)
        return xs, vs, np.einsum("tab,bm->tma", Fs, self.y0), idx

    def sample(self, ts, side=1):
        """Coordinate ``(W, dW/dt, d2W/dt2)``, each of shape ``(len(ts), m, n)``."""
        n = self.path.dim
        xs, vs, ys, idx = self.coordinates(ts, side)
        W, Wd = ys[..., :n], ys[..., n:]
        Wdd = np.empty_like(W)
        mech = self.flow.mech
        for j in range(xs.shape[0]):
            kx, kv = mech.linearization(xs[j], vs[j], self.path.segments[idx[j]].side)
            Wdd[j] = -(W[j] @ kx.T) - (Wd[j] @ kv.T)
        return W, Wd, Wdd

    def covariant(self, t, side=1):
        """``(W, D_t W)`` at ``t`` as ``(n, m)`` arrays."""
        C = self.flow.covariant_frame(t, side)
        y = C @ self.flow.matrix(t, side) @ self.y0
        n = self.path.dim
        return y[:n], y[n:]

    def jumps(self):
        """Per event: ``(event, W-, DW-, W+, DW+, dc)``."""
        out = []
        p = self.path
        for e in p.events:
            Wm, Pm = self.covariant(e.time, -1)
            Wp, Pp = self.covariant(e.time, 1)
            _, _, dc = jacobi_jump(p.geom, p.surf, p.pot, e, Wm, Pm, p.options.v_min)
            out.append((e, Wm, Pm, Wp, Pp, dc))
        return out


def propagate_jacobi(path: ReflectedPath, W0, DW0) -> JacobiField:
    """Reflected Jacobi field(s) with ``W(0) = W0`` and ``D_t W(0) = DW0``.

    ``W0``/``DW0`` may be ``(n,)`` vectors or ``(n, m)`` column stacks.
    """
    flow = fundamental(path)
    dx, dv = flow.to_coordinates(0.0, W0, DW0)
    return JacobiField(path, np.vstack([np.reshape(dx, (path.dim, -1)), np.reshape(dv, (path.dim, -1))]))


def jump_residuals(field: JacobiField) -> dict:
    """Residuals of the reflection and kink conditions for every event and column."""
    p = field.path
    g = p.geom
    worst = {"w_top_jump": 0.0, "w_perp_mean": 0.0, "b1": 0.0, "b2": 0.0, "kink_w": 0.0, "kink_dw": 0.0,
             "dc_normal": 0.0}
    for e, Wm, Pm, Wp, Pp, dc in field.jumps():
        y = e.point
        G = g.g(y)
        nrm = unit_normal(g, p.surf, y)
        if e.kind is EventKind.KINK:
            worst["kink_w"] = max(worst["kink_w"], _gnorm(G, Wp - Wm))
            worst["kink_dw"] = max(worst["kink_dw"], _gnorm(G, Pp - Pm))
            continue
        ng = nrm @ G
        a1 = float(ng @ e.v_in)
        a_top = e.v_in - a1 * nrm

        def top(X):
            return X - np.outer(nrm, ng @ X)

        worst["w_top_jump"] = max(worst["w_top_jump"], _gnorm(G, top(Wp) - top(Wm)))
        worst["w_perp_mean"] = max(worst["w_perp_mean"], float(np.max(np.abs(ng @ (Wp + Wm)))) / 2)
        s_dc = -normal_derivative(g, p.surf, y) @ dc
        worst["b1"] = max(worst["b1"], _gnorm(G, top(Pp) - top(Pm) - 2 * a1 * s_dc))
        w1 = ng @ Wm
        dvn = float(np.asarray(p.pot.grad_v(y)) @ nrm)
        pbar = 0.5 * (ng @ (Pp + Pm))
        ii = a_top @ G @ s_dc
        worst["b2"] = max(worst["b2"], float(np.max(np.abs(pbar + (w1 / a1) * dvn - ii))))
        worst["dc_normal"] = max(worst["dc_normal"], float(np.max(np.abs(ng @ dc))))
    return worst


def _gnorm(G, X):
    X = X.reshape(X.shape[0], -1)
    return float(np.sqrt(np.max(np.einsum("im,ij,jm->m", X, G, X))))


@dataclass(frozen=True)
class EndpointMap:
    """Covariant ``(W(0), D_t W(0)) -> (W(T), D_t W(T))`` as a ``2n x 2n`` matrix."""

    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0] // 2

    @property
    def B(self) -> np.ndarray:
        """Block sending ``D_t W(0)`` to ``W(T)`` for ``W(0) = 0``."""
        return self.matrix[:self.n, self.n:]

    def apply(self, W0, DW0):
        out = self.matrix @ np.concatenate([W0, DW0])
        return out[:self.n], out[self.n:]


def endpoint_map(path: ReflectedPath) -> EndpointMap:
    flow = fundamental(path)
    T = path.total_time
    C0 = flow.covariant_frame(0.0)
    CT = flow.covariant_frame(T, -1)
    return EndpointMap(CT @ flow.matrix(T, -1) @ np.linalg.inv(C0))


# ----------------------------------------------------------------------------------
# conjugate points


@dataclass(frozen=True)
class ConjugatePoint:
    time: float
    multiplicity: int
    sigma_ratio: float


def _b_block(flow, t, side):
    n = flow.n
    return flow.matrix(t, side)[:n, n:]


def conjugate_points(path: ReflectedPath, grid_dt: float | None = None, tol_rank: float = 1e-7,
                     t_start: float = 0.0) -> list:
    """Times in ``(0, T]`` at which a Jacobi field with ``W(0) = 0`` vanishes again.

    ``det B`` is scanned segment by segment (it changes sign at reflections)
    and sign changes are refined with Brent's method.  Zeros of even order are
    caught as local minima of ``sigma_min(B) / scale`` refined by golden-section
    search.  ``scale`` is the largest singular value of ``B`` on the grid.
    """
    flow = fundamental(path)
    n = path.dim
    T = path.total_time
    if grid_dt is None:
        grid_dt = T / 2000.0
    grids, dets, smins = [], [], []
    scale = 0.0
    for i, seg in enumerate(path.segments):
        m = max(int(np.ceil((seg.t1 - seg.t0) / grid_dt)), 2)
        ts = np.linspace(seg.t0, seg.t1, m + 1)
        _, _, Fs, _ = flow.evaluate(ts[1:-1], 1)
        Bs = np.concatenate([[_b_block(flow, ts[0], 1)], Fs[:, :n, n:], [_b_block(flow, ts[-1], -1)]])
        sv = np.linalg.svd(Bs, compute_uv=False)
        scale = max(scale, float(sv[:, 0].max()))
        grids.append(ts)
        dets.append(np.linalg.det(Bs))
        smins.append(sv[:, -1])
    if scale == 0.0:
        return []

    def sig(t, side):
        sv = np.linalg.svd(_b_block(flow, t, side), compute_uv=False)
        return sv

    found = []  # (time, cell id, from a sign change)
    for i, (ts, dt, sm) in enumerate(zip(grids, dets, smins)):
        seg = path.segments[i]

        def det_at(t, seg=seg):
            side = -1 if t >= seg.t1 else 1
            return np.linalg.det(_b_block(flow, t, side)) / scale ** n

        for j in range(ts.size - 1):
            if dt[j] == 0.0 or dt[j + 1] == 0.0:
                continue
            if np.sign(dt[j]) != np.sign(dt[j + 1]):
                t_star = brentq(det_at, ts[j], ts[j + 1], xtol=1e-13, rtol=4 * np.finfo(float).eps)
                found.append((t_star, (i, j), True))
        f = sm / scale
        for j in range(1, ts.size - 1):
            if f[j] <= f[j - 1] and f[j] < f[j + 1] and f[j] < 1e-2:
                # minimize in a shifted variable so the relative x-tolerance is not the bottleneck
                c, half = ts[j], ts[j + 1] - ts[j]
                res = minimize_scalar(lambda s: sig(c + s, 1)[-1] / scale, bounds=(-half, half),
                                      method="bounded", options={"xatol": 1e-13})
                if res.fun < tol_rank:
                    t_star = c + float(res.x)
                    found.append((t_star, (i, j - 1) if t_star < c else (i, j), False))
    sv_T = sig(T, -1)
    if sv_T[-1] / scale < tol_rank:
        found.append((T, (len(grids) - 1, grids[-1].size - 2), True))

    found.sort()
    groups = []
    for item in found:
        if groups and abs(item[0] - groups[-1][-1][0]) < 1e-6:
            groups[-1].append(item)
        else:
            groups.append([item])
    merged = []
    for grp in groups:
        best = next((it for it in grp if it[2]), grp[0])
        if merged and merged[-1][1] == best[1]:
            raise RefineGridError(f"two conjugate times in one grid cell near t={best[0]:.6g}; use a finer grid")
        merged.append(best[:2])

    out = []
    for t, _ in merged:
        side = -1 if t >= T else 1
        sv = sig(t, side)
        mult = int(np.sum(sv / scale < tol_rank))
        if mult == 0:
            # sign change whose SVD at the refined root is just above threshold
            mult = 1
        out.append(ConjugatePoint(float(t), mult, float(sv[-1] / scale)))
    return out


def b_scale(path: ReflectedPath, samples: int = 400) -> float:
    """Largest singular value of ``B(t)`` over a uniform grid (cached on the path)."""
    if "b_scale" not in path._cache:
        flow = fundamental(path)
        n = path.dim
        ts = np.linspace(0.0, path.total_time, samples + 1)[1:-1]
        _, _, Fs, _ = flow.evaluate(ts, 1)
        sv = np.linalg.svd(Fs[:, :n, n:], compute_uv=False)
        path._cache["b_scale"] = float(sv[:, 0].max())
    return path._cache["b_scale"]


def self_conjugate_ratio(path: ReflectedPath) -> float:
    """``sigma_min(B(T))`` relative to the size of ``B`` along the path.

    Normalizing by ``B(T)`` alone would miss isotropic degeneracy such as
    ``B(T) = 0`` for the isotropic oscillator after a full period.
    """
    sv = np.linalg.svd(endpoint_map(path).B, compute_uv=False)
    return float(sv[-1] / max(sv[0], b_scale(path)))


# ----------------------------------------------------------------------------------
# finite-difference cross-check


def variation_consistency_check(path: ReflectedPath, W0, DW0, eps: float, samples: int = 400) -> float:
    """Sup over sample times of ``|(alpha_eps - alpha) / eps - W|`` away from events."""
    W0 = np.asarray(W0, dtype=float)
    DW0 = np.asarray(DW0, dtype=float)
    if not (np.any(W0) or np.any(DW0)):
        return 0.0
    field = propagate_jacobi(path, W0, DW0)
    dx, dv = field.flow.to_coordinates(0.0, W0, DW0)
    pert = shoot(path.geom, path.surf, path.pot, path.x0 + eps * dx, path.v0 + eps * dv, path.total_time,
                 EventPolicy.exact(path.decisions), path.options)
    bad = np.concatenate([path.event_times, pert.event_times])
    ts = np.linspace(0.0, path.total_time, samples)
    keep = np.all(np.abs(ts[:, None] - bad[None, :]) > 10 * eps, axis=1) if bad.size else np.ones(ts.size, bool)
    ts = ts[keep]
    W, _, _ = field.sample(ts)
    worst = 0.0
    for j, t in enumerate(ts):
        xa, _ = path.state(t)
        xb, _ = pert.state(t)
        worst = max(worst, float(np.max(np.abs((xb - xa) / eps - W[j, 0]))))
    return worst
