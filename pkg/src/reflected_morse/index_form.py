"""Second variation and its index on broken-Jacobi subspaces.

``second_variation`` evaluates, for batched fields ``W`` and ``Z``,

    -int <D_t^2 W + R(v, W) v + Hess V . W, Z> dt + (event terms) + (break terms)

where every reflection contributes

    -<dD_tW, Zbar> + 2 <avg D_tW, N> Z_1 + 2 W_1 Z_1 <grad V, N> / a_1
    + 2 a_1 <S(dc_W), Zbar> - 2 II(dc_W, a_T) Z_1,

and kinks, node breaks and (for periodic fields) ``t = 0`` contribute
``-<dD_tW, Zbar>``.  The integrated-by-parts energy form

    int <D_tW, D_tZ> - <R(v, W) v + Hess V . W, Z> dt
    + sum_refl [2 W_1 Z_1 <grad V, N> / a_1 + 2 a_1 <S(dc_W), Zbar> - 2 II(dc_W, a_T) Z_1]

is also available; the two agree on admissible fields.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .dynamics import EventKind, Mechanics, ReflectedPath
from .errors import InconclusiveIndexError, InvalidFieldError, RefineNodesError
from .fields import field_breakpoints, random_admissible_field
from .geometry import _riemann_from, normal_derivative
from .jacobi import conjugate_points, fundamental

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


class BC(str, enum.Enum):
    FIXED = "fixed"
    PERIODIC = "periodic"


# ----------------------------------------------------------------------------------
# geometry along the path


class _PathGeometry:
    """Per-time coefficients of the Jacobi operator, memoized."""

    def __init__(self, path: ReflectedPath):
        self.path = path
        self.mech = Mechanics(path.geom, path.pot)
        self._memo = {}

    def at(self, t: float, side: int = 1):
        key = (float(t), side)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        p = self.path
        x, v = p.state(t, side)
        s = p.side_at(t, side)
        c = self.mech.coefficients(x, s)
        gam = c["gam"]
        c["x"], c["v"] = x, v
        c["acc"] = -np.einsum("kij,i,j->k", gam, v, v) - c["ginv"] @ c["dv"]
        c["R"] = _riemann_from(gam, c["dgam"])
        c["H"] = c["ginv"] @ (c["hv"] - np.einsum("kij,k->ij", gam, c["dv"]))
        self._memo[key] = c
        return c


def _geometry(path):
    pg = path._cache.get("pathgeom")
    if pg is None:
        pg = path._cache["pathgeom"] = _PathGeometry(path)
    return pg


def _covariant_derivative(c, W, Wd):
    """``P = D_t W`` for stacked coordinate fields ``W, Wd`` of shape ``(m, n)``."""
    return Wd + np.einsum("kij,i,mj->mk", c["gam"], c["v"], W)


def _jacobi_residual(c, W, Wd, Wdd):
    """``(P, D_t P + R(v, W) v + H W)`` at one time."""
    gam, v = c["gam"], c["v"]
    P = _covariant_derivative(c, W, Wd)
    dP = (
        Wdd
        + np.einsum("lkij,l,i,mj->mk", c["dgam"], v, v, W)
        + np.einsum("kij,i,mj->mk", gam, c["acc"], W)
        + np.einsum("kij,i,mj->mk", gam, v, Wd)
    )
    DtP = dP + np.einsum("kij,i,mj->mk", gam, v, P)
    curv = np.einsum("lijk,i,mj,k->ml", c["R"], v, W, v)
    return P, DtP + curv + W @ c["H"].T


# ----------------------------------------------------------------------------------
# admissibility


def check_admissible(path: ReflectedPath, fld, bc, tol=1e-8, window=None):
    """Raise :class:`InvalidFieldError` if ``fld`` violates continuity, reflection or end conditions."""
    T = path.total_time
    cuts = field_breakpoints(path, fld, window=window)
    ev = {e.time: e for e in path.events}
    Wl0, _, _ = fld.sample(cuts, -1)
    Wr0, _, _ = fld.sample(cuts, 1)
    scale = max(1.0, float(np.max(np.abs(Wl0))), float(np.max(np.abs(Wr0))))
    lim = tol * scale
    for j, t in enumerate(cuts):
        if t <= cuts[0] or t >= cuts[-1]:
            continue
        Wl, Wr = Wl0[j], Wr0[j]
        e = ev.get(t)
        if e is not None and e.kind is EventKind.REFLECTION:
            gN = path.geom.g(e.point) @ e.normal
            nl, nr = Wl @ gN, Wr @ gN
            dtop = (Wr - np.outer(nr, e.normal)) - (Wl - np.outer(nl, e.normal))
            if np.max(np.abs(dtop)) > lim or np.max(np.abs(nl + nr)) > 2 * lim:
                raise InvalidFieldError(f"field violates the reflection conditions at t={t:.6g}")
        elif np.max(np.abs(Wr - Wl)) > lim:
            raise InvalidFieldError(f"field is discontinuous at t={t:.6g}")
    if window is None:
        W0, _, _ = fld.sample(np.array([0.0]), 1)
        WT, _, _ = fld.sample(np.array([T]), -1)
        if BC(bc) is BC.FIXED:
            if np.max(np.abs(W0)) > lim or np.max(np.abs(WT)) > lim:
                raise InvalidFieldError("fixed-endpoint field must vanish at t=0 and t=T")
        elif np.max(np.abs(W0 - WT)) > lim:
            raise InvalidFieldError("periodic field must satisfy W(0) = W(T)")


# ----------------------------------------------------------------------------------
# the bilinear form


def second_variation_matrix(path: ReflectedPath, W, Z, bc=BC.FIXED, form="differentiated", check=True,
                            window=None, pieces_per_period=48) -> np.ndarray:
    """Matrix ``J''(W_a, Z_b)`` over the batches of ``W`` and ``Z``.

    ``window=(a, b)`` restricts the evaluation to fields supported in
    ``[a, b]`` (no end-point conditions are applied).
    """
    bc = BC(bc)
    if form not in ("differentiated", "energy"):
        raise ValueError(f"unknown form {form!r}")
    if check:
        check_admissible(path, W, bc, window=window)
        check_admissible(path, Z, bc, window=window)
    pg = _geometry(path)
    T = path.total_time
    cuts = field_breakpoints(path, W, Z, window=window)
    h_max = T / pieces_per_period
    ts, ws = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        m = max(1, int(np.ceil((b - a) / h_max - 1e-9)))
        edges = np.linspace(a, b, m + 1)
        for lo, hi in zip(edges[:-1], edges[1:]):
            half = 0.5 * (hi - lo)
            ts.append(lo + half * (_GL_NODES + 1))
            ws.append(half * _GL_WEIGHTS)
    ts = np.concatenate(ts)
    ws = np.concatenate(ws)
    Ws, Wds, Wdds = W.sample(ts, 1)
    Zs, Zds, _ = Z.sample(ts, 1)
    M = np.zeros((W.count, Z.count))
    for q, t in enumerate(ts):
        c = pg.at(t)
        P, r = _jacobi_residual(c, Ws[q], Wds[q], Wdds[q])
        G = c["g"]
        if form == "differentiated":
            M -= ws[q] * (r @ G @ Zs[q].T)
        else:
            PZ = _covariant_derivative(c, Zs[q], Zds[q])
            M += ws[q] * (P @ G @ PZ.T - _zeroth_order(c, Ws[q]) @ G @ Zs[q].T)

    ev = {e.time: e for e in path.events}
    inner = cuts[1:-1]
    for t in inner:
        e = ev.get(t)
        M += _break_term(path, pg, W, Z, t, e, form)
    if window is None and bc is BC.PERIODIC and form == "differentiated":
        c0, cT = pg.at(0.0, 1), pg.at(T, -1)
        W0, Wd0, _ = W.sample(np.array([0.0]), 1)
        WT, WdT, _ = W.sample(np.array([T]), -1)
        Z0, _, _ = Z.sample(np.array([0.0]), 1)
        dP = _covariant_derivative(c0, W0[0], Wd0[0]) - _covariant_derivative(cT, WT[0], WdT[0])
        M -= dP @ c0["g"] @ Z0[0].T
    return M


def _zeroth_order(c, W):
    """``R(v, W) v + H W`` for stacked ``W``."""
    return np.einsum("lijk,i,mj,k->ml", c["R"], c["v"], W, c["v"]) + W @ c["H"].T


def _break_term(path, pg, W, Z, t, event, form):
    tt = np.array([t])
    Wl, Wdl, _ = W.sample(tt, -1)
    Wr, Wdr, _ = W.sample(tt, 1)
    Zl, _, _ = Z.sample(tt, -1)
    Zr, _, _ = Z.sample(tt, 1)
    Wl, Wdl, Wr, Wdr, Zl, Zr = Wl[0], Wdl[0], Wr[0], Wdr[0], Zl[0], Zr[0]
    cl, cr = pg.at(t, -1), pg.at(t, 1)
    G = cl["g"]
    Pl = _covariant_derivative(cl, Wl, Wdl)
    Pr = _covariant_derivative(cr, Wr, Wdr)
    zbar = 0.5 * (Zl + Zr)
    if event is None or event.kind is EventKind.KINK:
        return np.zeros((W.count, Z.count)) if form == "energy" else -(Pr - Pl) @ G @ zbar.T
    nrm = event.normal
    gN = G @ nrm
    a1 = float(event.v_in @ gN)
    a_top = event.v_in - a1 * nrm
    w1 = Wl @ gN
    w_top = 0.5 * ((Wl - np.outer(w1, nrm)) + (Wr - np.outer(Wr @ gN, nrm)))
    dc = -np.outer(w1 / a1, a_top) + w_top
    s_dc = dc @ (-normal_derivative(path.geom, path.surf, event.point)).T
    z1 = Zl @ gN
    dvn = float(np.asarray(path.pot.grad_v(event.point), dtype=float) @ nrm)
    ii = s_dc @ G @ a_top
    common = (2 * dvn / a1) * np.outer(w1, z1) + 2 * a1 * (s_dc @ G @ zbar.T) - 2 * np.outer(ii, z1)
    if form == "energy":
        return common
    pbar_n = 0.5 * (Pl + Pr) @ gN
    return -(Pr - Pl) @ G @ zbar.T + 2 * np.outer(pbar_n, z1) + common


def second_variation(path: ReflectedPath, W, Z, bc=BC.FIXED, form="differentiated", check=True):
    """``J''(W, Z)``; a float for single fields, otherwise the batch matrix."""
    M = second_variation_matrix(path, W, Z, bc, form, check)
    return float(M[0, 0]) if M.shape == (1, 1) else M


# ----------------------------------------------------------------------------------
# broken Jacobi fields


def _nudged_nodes(path: ReflectedPath, k: int):
    T = path.total_time
    h = T / k
    nodes = np.linspace(0.0, T, k + 1)
    ev = path.event_times
    if ev.size:
        for j in range(1, k):
            for shift in (0.0, 0.25, -0.25, 0.5, -0.5, 0.125, -0.125, 0.375, -0.375):
                t = nodes[j] + shift * h
                if np.min(np.abs(ev - t)) >= 0.2 * h:
                    nodes[j] = t
                    break
            else:
                raise RefineNodesError(f"cannot place node {j} away from events; increase k")
    if np.any(np.diff(nodes) <= 0):
        raise RefineNodesError("node placement failed")
    return nodes


class BrokenJacobiSpace:
    """Piecewise reflected Jacobi fields determined by their values at the nodes.

    Fixed end points: the values at the interior nodes are free (dimension
    ``n (k - 1)``).  Periodic: node 0 and node ``k`` share one free value
    (dimension ``n k``).
    """

    def __init__(self, path: ReflectedPath, k: int, bc=BC.FIXED, nodes=None):
        self.path = path
        self.bc = BC(bc)
        self.flow = fundamental(path)
        self.nodes = _nudged_nodes(path, k) if nodes is None else np.asarray(nodes, dtype=float)
        self.k = self.nodes.size - 1
        n = self.n = path.dim
        free = list(range(1, self.k)) if self.bc is BC.FIXED else list(range(self.k))
        self.count = n * len(free)
        # selector E[j] maps basis coefficients to the value at node j
        E = np.zeros((self.k + 1, n, self.count))
        for col, j in enumerate(free):
            E[j, :, col * n:(col + 1) * n] = np.eye(n)
        if self.bc is BC.PERIODIC:
            E[self.k] = E[0]
        self.E = E
        self.node_F = np.array([self.flow.matrix(t, 1 if j < self.k else -1) for j, t in enumerate(self.nodes)])
        self.gap_start = []  # coordinate start data (2n, count) on each gap, relative to F(t_j)
        self.gap_B = []
        for j in range(self.k):
            Finv = np.linalg.inv(self.node_F[j])
            Phi = self.flow.matrix(self.nodes[j + 1], -1) @ Finv
            A, B = Phi[:n, :n], Phi[:n, n:]
            sv = np.linalg.svd(B, compute_uv=False)
            if sv[-1] <= 1e-8 * sv[0]:
                raise RefineNodesError(f"gap {j} contains a conjugate point; increase k")
            dv = np.linalg.solve(B, E[j + 1] - A @ E[j])
            self.gap_start.append(Finv @ np.vstack([E[j], dv]))
            self.gap_B.append(sv)

    @property
    def breakpoints(self):
        return tuple(self.nodes[1:-1])

    def gap_of(self, t, side=1):
        inner = self.nodes[1:-1]
        return int(np.searchsorted(inner, t, side="right" if side > 0 else "left"))

    def sample(self, ts, side=1):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        n = self.n
        xs, vs, Fs, idx = self.flow.evaluate(ts, side)
        W = np.empty((ts.size, self.count, n))
        Wd = np.empty_like(W)
        Wdd = np.empty_like(W)
        mech = self.flow.mech
        for q, t in enumerate(ts):
            y = Fs[q] @ self.gap_start[self.gap_of(t, side)]
            W[q], Wd[q] = y[:n].T, y[n:].T
            kx, kv = mech.linearization(xs[q], vs[q], self.path.segments[idx[q]].side)
            Wdd[q] = -(W[q] @ kx.T) - (Wd[q] @ kv.T)
        return W, Wd, Wdd

    def node_matrix(self) -> np.ndarray:
        """``-sum_j <dD_tW_a(t_j), W_b(t_j)>`` using only the node jumps (reduced form)."""
        n = self.n
        M = np.zeros((self.count, self.count))
        js = range(1, self.k) if self.bc is BC.FIXED else range(self.k)
        for j in js:
            t = self.nodes[j]
            left_gap = j - 1 if j > 0 else self.k - 1
            t_left = t if j > 0 else self.path.total_time
            yl = self.flow.matrix(t_left, -1) @ self.gap_start[left_gap]
            yr = self.flow.matrix(t, 1) @ self.gap_start[j]
            cl = self.flow.covariant_frame(t_left, -1)
            cr = self.flow.covariant_frame(t, 1)
            dP = (cr @ yr)[n:] - (cl @ yl)[n:]
            x, _ = self.flow.state(t, 1)
            M -= dP.T @ self.path.geom.g(x) @ self.E[j]
        return M


# ----------------------------------------------------------------------------------
# index reports


@dataclass
class IndexReport:
    k: int
    bc: str
    matrix: np.ndarray
    eigenvalues: np.ndarray
    index: int
    nullity: int
    positive: int
    asymmetry: float
    tol_eig: float
    conjugate_points: list = field(default_factory=list)

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


def validate_short_gaps(path: ReflectedPath, space: BrokenJacobiSpace, modes: int = 2, seed: int = 0,
                        margin: float = 1e-10):
    """Energy-form positivity on admissible fields supported in each single gap.

    Raises :class:`RefineNodesError` when some gap admits a non-positive
    direction, i.e. the nodes are too far apart for the broken-Jacobi reduction.
    """
    rng = np.random.default_rng(seed)
    n = path.dim
    worst = np.inf
    for j in range(space.k):
        a, b = space.nodes[j], space.nodes[j + 1]
        Z = random_admissible_field(path, rng, count=n * modes, support=(a, b), modes=modes)
        E = second_variation_matrix(path, Z, Z, BC.FIXED, form="energy", check=True, window=(a, b))
        E = 0.5 * (E + E.T)
        lam = np.linalg.eigvalsh(E)
        rel = lam[0] / max(abs(lam[-1]), 1e-300)
        worst = min(worst, rel)
        if rel <= margin:
            raise RefineNodesError(f"second variation not positive on gap {j} ({a:.4g}, {b:.4g}); increase k")
    return worst


def assemble_index_form(path: ReflectedPath, k: int, bc=BC.FIXED, validate: bool = True,
                        rtol_eig: float = 1e-7, max_asymmetry: float = 1e-8, with_conjugates: bool = True
                        ) -> IndexReport:
    """Index and nullity of ``J''`` restricted to the broken-Jacobi space with ``k`` gaps."""
    bc = BC(bc)
    space = BrokenJacobiSpace(path, k, bc)
    if validate:
        validate_short_gaps(path, space)
    M = second_variation_matrix(path, space, space, bc, form="differentiated", check=False)
    scale = max(float(np.max(np.abs(M))), 1e-300)
    asym = float(np.max(np.abs(M - M.T))) / scale
    if asym > max_asymmetry:
        raise InconclusiveIndexError(f"assembled form is not symmetric (relative asymmetry {asym:.2e})")
    S = 0.5 * (M + M.T)
    lam = np.linalg.eigvalsh(S)
    tol = rtol_eig * float(np.max(np.abs(lam)))
    index = int(np.sum(lam < -tol))
    nullity = int(np.sum(np.abs(lam) <= tol))
    cps = conjugate_points(path) if with_conjugates else []
    return IndexReport(space.k, bc.value, S, lam, index, nullity, lam.size - index - nullity, asym, tol, cps)


def index_stability_scan(path: ReflectedPath, ks=(8, 16, 32), bc=BC.FIXED, raise_on_change: bool = True):
    """Index and nullity for each ``k``; inconclusive if they disagree."""
    table = []
    for k in ks:
        rep = assemble_index_form(path, k, bc, with_conjugates=False)
        table.append({"k": k, "index": rep.index, "nullity": rep.nullity, "min_eig": float(rep.eigenvalues[0])})
    pairs = {(r["index"], r["nullity"]) for r in table}
    if raise_on_change and len(pairs) > 1:
        err = InconclusiveIndexError(f"index/nullity change with k: {table}")
        err.table = table
        raise err
    return table
