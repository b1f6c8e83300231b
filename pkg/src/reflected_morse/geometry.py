"""Differential geometry on a single coordinate chart.

Conventions
-----------
* ``metric_derivs(x)[k, i, j]`` is ``d g_ij / d x^k``; ``metric_hess(x)[k, l, i, j]``
  is the second partial ``d^2 g_ij / dx^k dx^l``.
* ``christoffel(geom, x)[k, i, j]`` is ``Gamma^k_ij``.
* Curvature follows the sign for which the Jacobi equation reads
  ``D_t^2 W + R(v, W) v + Hess V . W = 0``; for the unit sphere
  ``R(u, v) w = <u, w> v - <v, w> u``, so ``R(u, v) u = v`` for orthonormal
  ``u, v``.  In components ``R(u, v) w = -(d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk
  - G^l_jm G^m_ik) u^i v^j w^k``.
* The unit normal ``N`` of ``Y = {rho = 0}`` points toward ``rho > 0``.  The
  shape operator is ``S(u) = -nabla_u N`` and ``II(u, v) = <S(u), v>``.  With
  ``rho = 1 - |x|`` (the unit disk, ``N`` pointing inward) every unit tangent
  gives ``II(u, u) = +1``.
* Potential Hessians are coordinate second partials; :func:`hess_v_mixed`
  turns them into the (1,1) covariant Hessian used in the Jacobi equation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateMetricError, OffSurfaceError, PreconditionError
from .polynomial import Polynomial

FD_STEP = 1e-5
TOL_Y = 1e-9


def _central_diff(fun, x, h):
    """Stack of central differences ``d fun / d x^k`` along a new leading axis."""
    x = np.asarray(x, dtype=float)
    out = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(out)


@dataclass(frozen=True)
class ChartGeometry:
    """Riemannian metric on one chart.

    Derivative closures are optional; missing ones fall back to central
    differences with step ``fd_step``.
    """

    dim: int
    metric: Callable[[np.ndarray], np.ndarray]
    metric_derivs: Optional[Callable[[np.ndarray], np.ndarray]] = None
    metric_hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"
    fd_step: float = FD_STEP
    frame: Optional[Callable[[np.ndarray], dict]] = None

    def g(self, x) -> np.ndarray:
        return np.asarray(self.metric(np.asarray(x, dtype=float)), dtype=float)

    def dg(self, x) -> np.ndarray:
        if self.metric_derivs is not None:
            return np.asarray(self.metric_derivs(np.asarray(x, dtype=float)), dtype=float)
        return _central_diff(self.g, x, self.fd_step)

    def d2g(self, x) -> np.ndarray:
        if self.metric_hess is not None:
            return np.asarray(self.metric_hess(np.asarray(x, dtype=float)), dtype=float)
        return _central_diff(self.dg, x, self.fd_step)

    def g_inv(self, x) -> np.ndarray:
        return _checked_inverse(self.g(x), x)

    def inner(self, x, u, v) -> float:
        return float(np.asarray(u) @ self.g(x) @ np.asarray(v))

    def norm(self, x, u) -> float:
        return float(np.sqrt(max(self.inner(x, u, u), 0.0)))


def _checked_inverse(g, x):
    try:
        c = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise DegenerateMetricError(f"metric is not positive definite at x={np.asarray(x).tolist()}")
    ci = np.linalg.inv(c)
    return ci.T @ ci


@dataclass(frozen=True)
class HypersurfaceSpec:
    """Hypersurface ``Y = {rho = 0}`` with ``N = grad rho / |grad rho|_g``.

    ``grad_rho`` returns coordinate partials (a covector).  ``boundary`` marks
    ``Y`` as part of the boundary of the domain, in which case transmission is
    not allowed.
    """

    dim: int
    rho: Callable[[np.ndarray], float]
    grad_rho: Callable[[np.ndarray], np.ndarray]
    hess_rho: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"
    boundary: bool = False
    sample_box: tuple = (-2.0, 2.0)

    def d2rho(self, x) -> np.ndarray:
        if self.hess_rho is not None:
            return np.asarray(self.hess_rho(np.asarray(x, dtype=float)), dtype=float)
        return _central_diff(self.grad_rho, x, FD_STEP)

    def sample_points(self, count, rng, max_iter=50):
        """Points of ``Y`` obtained by Newton-projecting random points of the sample box."""
        lo, hi = self.sample_box
        out = []
        tries = 0
        while len(out) < count and tries < 50 * count:
            tries += 1
            x = rng.uniform(lo, hi, size=self.dim)
            for _ in range(max_iter):
                r = self.rho(x)
                d = np.asarray(self.grad_rho(x), dtype=float)
                dd = d @ d
                if dd < 1e-14:
                    break
                x = x - r * d / dd
                if abs(r) < 1e-13:
                    break
            if abs(self.rho(x)) < 1e-12 and np.all((x >= lo) & (x <= hi)):
                out.append(x)
        return np.array(out)


@dataclass(frozen=True)
class PotentialSpec:
    """Potential with one-sided coordinate Hessians.

    ``grad_v`` returns coordinate partials of ``V``.  ``hess_v_minus`` defaults
    to ``hess_v_plus`` when the potential is smooth across ``Y``.
    """

    v: Callable[[np.ndarray], float]
    grad_v: Callable[[np.ndarray], np.ndarray]
    hess_v_plus: Callable[[np.ndarray], np.ndarray]
    hess_v_minus: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "custom"
    is_zero: bool = False

    def hess(self, x, side: int = 1) -> np.ndarray:
        if side < 0 and self.hess_v_minus is not None:
            return np.asarray(self.hess_v_minus(x), dtype=float)
        return np.asarray(self.hess_v_plus(x), dtype=float)


# ----------------------------------------------------------------------------------
# connection and curvature


def connection_data(geom: ChartGeometry, x) -> dict:
    """``g``, ``ginv``, ``dg``, ``gam`` and ``dgam`` at ``x`` in one call.

    Built-in charts answer in closed form; custom charts go through the
    generic formulas.
    """
    x = np.asarray(x, dtype=float)
    if geom.frame is not None:
        return geom.frame(x)
    ginv = geom.g_inv(x)
    dg = geom.dg(x)
    return {"g": geom.g(x), "ginv": ginv, "dg": dg, "gam": _christoffel_from(ginv, dg),
            "dgam": christoffel_derivs(geom, x)}


def christoffel(geom: ChartGeometry, x) -> np.ndarray:
    """``Gamma^k_ij`` at ``x``; raises :class:`DegenerateMetricError` if ``g(x)`` is not SPD."""
    x = np.asarray(x, dtype=float)
    ginv = geom.g_inv(x)
    return _christoffel_from(ginv, geom.dg(x))


def _christoffel_lower(dg):
    # Gamma_{m,ij} = 1/2 (d_i g_jm + d_j g_im - d_m g_ij)
    return 0.5 * (np.transpose(dg, (2, 0, 1)) + np.transpose(dg, (2, 1, 0)) - dg)


def _christoffel_from(ginv, dg):
    return np.einsum("km,mij->kij", ginv, _christoffel_lower(dg))


def christoffel_derivs(geom: ChartGeometry, x) -> np.ndarray:
    """``d_l Gamma^k_ij`` indexed ``[l, k, i, j]``.

    Uses the analytic second metric derivatives when the chart supplies them and
    central differences of :func:`christoffel` otherwise.
    """
    x = np.asarray(x, dtype=float)
    if geom.metric_hess is None:
        return _central_diff(lambda y: christoffel(geom, y), x, geom.fd_step)
    ginv = geom.g_inv(x)
    dg = geom.dg(x)
    d2g = geom.d2g(x)
    gam = _christoffel_from(ginv, dg)
    # d_l Gamma_{m,ij}, d2g[l, a, i, j] = d_l d_a g_ij
    dlow = 0.5 * (np.einsum("lijm->lmij", d2g) + np.einsum("ljim->lmij", d2g) - d2g)
    term1 = np.einsum("km,lmij->lkij", ginv, dlow)
    term2 = np.einsum("ka,lab,bij->lkij", ginv, dg, gam)
    return term1 - term2


def riemann_tensor(geom: ChartGeometry, x) -> np.ndarray:
    """Components ``Rm[l, i, j, k]`` with ``R(u, v) w = Rm[l,i,j,k] u^i v^j w^k``."""
    x = np.asarray(x, dtype=float)
    gam = christoffel(geom, x)
    dgam = christoffel_derivs(geom, x)
    return _riemann_from(gam, dgam)


def _riemann_from(gam, dgam):
    # standard R^l_{ijk} for (nabla_i nabla_j - nabla_j nabla_i) acting on d_k
    std = (
        np.einsum("iljk->lijk", dgam)
        - np.einsum("jlik->lijk", dgam)
        + np.einsum("lim,mjk->lijk", gam, gam)
        - np.einsum("ljm,mik->lijk", gam, gam)
    )
    return -std


def riemann(geom: ChartGeometry, x, u, v, w) -> np.ndarray:
    """``R(u, v) w`` in the sign convention of the module docstring."""
    return np.einsum("lijk,i,j,k->l", riemann_tensor(geom, x), u, v, w)


def sectional_curvature(geom: ChartGeometry, x, u, v) -> float:
    x = np.asarray(x, dtype=float)
    g = geom.g(x)
    num = float(np.asarray(v) @ g @ riemann(geom, x, u, v, u))
    den = float((u @ g @ u) * (v @ g @ v) - (u @ g @ v) ** 2)
    return num / den


# ----------------------------------------------------------------------------------
# hypersurface geometry


def unit_normal(geom: ChartGeometry, surf: HypersurfaceSpec, x) -> np.ndarray:
    """Unit normal field ``N = g^{-1} d rho / |d rho|_g`` (defined off ``Y`` too)."""
    x = np.asarray(x, dtype=float)
    drho = np.asarray(surf.grad_rho(x), dtype=float)
    m = geom.g_inv(x) @ drho
    s2 = float(drho @ m)
    if s2 <= 0.0:
        raise PreconditionError(f"grad rho vanishes at x={x.tolist()}: degenerate level set")
    return m / np.sqrt(s2)


def normal_derivative(geom: ChartGeometry, surf: HypersurfaceSpec, x) -> np.ndarray:
    """Matrix ``A`` with ``nabla_u N = A @ u``."""
    x = np.asarray(x, dtype=float)
    ginv = geom.g_inv(x)
    dg = geom.dg(x)
    drho = np.asarray(surf.grad_rho(x), dtype=float)
    h = surf.d2rho(x)
    m = ginv @ drho
    s2 = float(drho @ m)
    if s2 <= 0.0:
        raise PreconditionError(f"grad rho vanishes at x={x.tolist()}")
    s = np.sqrt(s2)
    # dm[k, i] = d_i m^k
    dm = -np.einsum("kc,icd,d->ki", ginv, dg, m) + ginv @ h
    ds = (h @ m + drho @ dm) / (2 * s)
    n = m / s
    dn = dm / s - np.outer(m, ds) / s2
    gam = _christoffel_from(ginv, dg)
    return dn + np.einsum("kij,j->ki", gam, n)


def _require_on_surface(surf, y, tol=TOL_Y):
    r = float(surf.rho(y))
    if abs(r) >= tol:
        raise OffSurfaceError(f"point {np.asarray(y).tolist()} is off the hypersurface (rho={r:.3e})")


def split_normal_tangent(geom: ChartGeometry, surf: HypersurfaceSpec, y, w, tol=TOL_Y):
    """Return ``(w_perp, w_top)`` with ``w_perp = <w, N> N``."""
    _require_on_surface(surf, y, tol)
    n = unit_normal(geom, surf, y)
    w = np.asarray(w, dtype=float)
    perp = geom.inner(y, w, n) * n
    return perp, w - perp


def _require_tangent(geom, surf, y, *vectors, tol=1e-10):
    n = unit_normal(geom, surf, y)
    g = geom.g(y)
    for u in vectors:
        u = np.asarray(u, dtype=float)
        scale = max(1.0, float(np.sqrt(max(u @ g @ u, 0.0))))
        if abs(float(u @ g @ n)) > tol * scale:
            raise PreconditionError("vector is not tangent to the hypersurface")


def shape_operator(geom: ChartGeometry, surf: HypersurfaceSpec, y, v, check=True, tol=TOL_Y) -> np.ndarray:
    """``S(v) = -nabla_v N`` for ``v`` tangent to ``Y``."""
    if check:
        _require_on_surface(surf, y, tol)
        _require_tangent(geom, surf, y, v)
    return -normal_derivative(geom, surf, y) @ np.asarray(v, dtype=float)


def second_fundamental_form(geom: ChartGeometry, surf: HypersurfaceSpec, y, u, v, check=True, tol=TOL_Y) -> float:
    """Scalar ``<II(u, v), N> = -<v, nabla_u N>``."""
    if check:
        _require_on_surface(surf, y, tol)
        _require_tangent(geom, surf, y, u, v)
    s_u = -normal_derivative(geom, surf, y) @ np.asarray(u, dtype=float)
    return geom.inner(y, s_u, v)


# ----------------------------------------------------------------------------------
# potential helpers


def grad_v_vector(geom: ChartGeometry, pot: PotentialSpec, x) -> np.ndarray:
    """Metric gradient ``g^{-1} dV``."""
    return geom.g_inv(x) @ np.asarray(pot.grad_v(x), dtype=float)


def hess_v_mixed(geom: ChartGeometry, pot: PotentialSpec, x, side: int = 1) -> np.ndarray:
    """(1,1) covariant Hessian ``g^{-1}(d_i d_j V - Gamma^k_ij d_k V)``."""
    x = np.asarray(x, dtype=float)
    ginv = geom.g_inv(x)
    gam = _christoffel_from(ginv, geom.dg(x))
    cov = pot.hess(x, side) - np.einsum("kij,k->ij", gam, np.asarray(pot.grad_v(x), dtype=float))
    return ginv @ cov


# ----------------------------------------------------------------------------------
# registries


def _euclidean(dim=2):
    dim = int(dim)
    eye = np.eye(dim)
    zeros3 = np.zeros((dim, dim, dim))
    zeros4 = np.zeros((dim, dim, dim, dim))
    data = {"g": eye, "ginv": eye, "dg": zeros3, "gam": zeros3, "dgam": zeros4}
    return ChartGeometry(dim, lambda x: eye, lambda x: zeros3, lambda x: zeros4, name="euclidean",
                         frame=lambda x: data)


def _polar_flat():
    def g(x):
        return np.diag([1.0, x[0] ** 2])

    def dg(x):
        d = np.zeros((2, 2, 2))
        d[0, 1, 1] = 2 * x[0]
        return d

    def d2g(x):
        d = np.zeros((2, 2, 2, 2))
        d[0, 0, 1, 1] = 2.0
        return d

    def frame(x):
        r = x[0]
        if abs(r) < 1e-12:
            raise DegenerateMetricError("polar chart is singular at r=0")
        gam = np.zeros((2, 2, 2))
        gam[0, 1, 1] = -r
        gam[1, 0, 1] = gam[1, 1, 0] = 1 / r
        dgam = np.zeros((2, 2, 2, 2))
        dgam[0, 0, 1, 1] = -1.0
        dgam[0, 1, 0, 1] = dgam[0, 1, 1, 0] = -1 / r ** 2
        return {"g": g(x), "ginv": np.diag([1.0, 1 / r ** 2]), "dg": dg(x), "gam": gam, "dgam": dgam}

    return ChartGeometry(2, g, dg, d2g, name="polar-flat", frame=frame)


def _sphere_polar(radius=1.0):
    a2 = float(radius) ** 2

    def g(x):
        return a2 * np.diag([1.0, np.sin(x[0]) ** 2])

    def dg(x):
        d = np.zeros((2, 2, 2))
        d[0, 1, 1] = a2 * np.sin(2 * x[0])
        return d

    def d2g(x):
        d = np.zeros((2, 2, 2, 2))
        d[0, 0, 1, 1] = 2 * a2 * np.cos(2 * x[0])
        return d

    def frame(x):
        s, c = np.sin(x[0]), np.cos(x[0])
        if abs(s) < 1e-12:
            raise DegenerateMetricError("polar sphere chart is singular at the poles")
        gam = np.zeros((2, 2, 2))
        gam[0, 1, 1] = -s * c
        gam[1, 0, 1] = gam[1, 1, 0] = c / s
        dgam = np.zeros((2, 2, 2, 2))
        dgam[0, 0, 1, 1] = -np.cos(2 * x[0])
        dgam[0, 1, 0, 1] = dgam[0, 1, 1, 0] = -1 / s ** 2
        return {"g": g(x), "ginv": np.diag([1 / a2, 1 / (a2 * s * s)]), "dg": dg(x), "gam": gam, "dgam": dgam}

    return ChartGeometry(2, g, dg, d2g, name="sphere-polar", frame=frame)


def _conformal(phi: Polynomial):
    n = phi.dim
    eye = np.eye(n)

    def g(x):
        return np.exp(2 * phi(x)) * eye

    def dg(x):
        f = np.exp(2 * phi(x))
        return 2 * f * np.einsum("k,ij->kij", phi.grad(x), eye)

    def d2g(x):
        val, grad, hess = phi.all(x)
        f = np.exp(2 * val)
        return f * np.einsum("kl,ij->klij", 4 * np.outer(grad, grad) + 2 * hess, eye)

    def frame(x):
        val, grad, hess = phi.all(x)
        f = np.exp(2 * val)
        # Gamma^k_ij = d^k_i phi_j + d^k_j phi_i - d_ij phi_k
        gam = np.einsum("ki,j->kij", eye, grad) + np.einsum("kj,i->kij", eye, grad) - np.einsum("ij,k->kij", eye, grad)
        dgam = (np.einsum("ki,jl->lkij", eye, hess) + np.einsum("kj,il->lkij", eye, hess)
                - np.einsum("ij,kl->lkij", eye, hess))
        return {"g": f * eye, "ginv": eye / f, "dg": 2 * f * np.einsum("k,ij->kij", grad, eye), "gam": gam,
                "dgam": dgam}

    return ChartGeometry(n, g, dg, d2g, name="conformal", frame=frame)


def make_chart(name: str, **params) -> ChartGeometry:
    if name == "euclidean":
        return _euclidean(params.get("dim", 2))
    if name == "polar-flat":
        return _polar_flat()
    if name == "sphere-polar":
        return _sphere_polar(params.get("radius", 1.0))
    if name == "conformal":
        phi = params["phi"]
        if not isinstance(phi, Polynomial):
            phi = polynomial_from_terms(params.get("dim", 2), phi)
        return _conformal(phi)
    raise KeyError(f"unknown chart {name!r}")


def polynomial_from_terms(dim, terms) -> Polynomial:
    """Accept ``[[coeff, [e1, ..., en]], ...]`` as written in scenario files."""
    return Polynomial(int(dim), tuple((float(c), tuple(e)) for c, e in terms))


def _hyperplane(dim, axis=0, offset=0.0, boundary=False):
    grad = np.zeros(dim)
    grad[axis] = 1.0
    zero = np.zeros((dim, dim))
    return HypersurfaceSpec(
        dim,
        rho=lambda x: float(x[axis] - offset),
        grad_rho=lambda x: grad,
        hess_rho=lambda x: zero,
        name="hyperplane",
        boundary=boundary,
        sample_box=(offset - 2.0, offset + 2.0),
    )


def _circle(dim, radius=1.0, center=None, boundary=False):
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    r0 = float(radius)

    def rho(x):
        return r0 - float(np.linalg.norm(x - c))

    def grad(x):
        d = x - c
        r = np.linalg.norm(d)
        # rho peaks at the centre; use the zero subgradient there
        return -d / r if r > 0 else np.zeros(dim)

    def hess(x):
        d = x - c
        r = np.linalg.norm(d)
        return -(np.eye(dim) - np.outer(d, d) / r**2) / r

    return HypersurfaceSpec(dim, rho, grad, hess, name="circle", boundary=boundary,
                            sample_box=(float(c.min()) - 1.5 * r0, float(c.max()) + 1.5 * r0))


def _polynomial_surface(poly: Polynomial, boundary=False, sample_box=(-2.0, 2.0)):
    return HypersurfaceSpec(poly.dim, poly, poly.grad, poly.hess, name="polynomial", boundary=boundary,
                            sample_box=tuple(sample_box))


def _slab(dim, axis=0, lower=0.0, upper=1.0, boundary=True):
    # rho = (x^axis - lower)(upper - x^axis), positive between the walls
    e_lo = [0] * dim
    e_1 = [0] * dim
    e_1[axis] = 1
    e_2 = [0] * dim
    e_2[axis] = 2
    poly = Polynomial(dim, ((-lower * upper, tuple(e_lo)), (lower + upper, tuple(e_1)), (-1.0, tuple(e_2))))
    s = _polynomial_surface(poly, boundary, sample_box=(min(lower, upper) - 1.0, max(lower, upper) + 1.0))
    return HypersurfaceSpec(dim, s.rho, s.grad_rho, s.hess_rho, name="slab", boundary=boundary, sample_box=s.sample_box)


def make_hypersurface(name: str, dim: int = 2, **params) -> HypersurfaceSpec:
    boundary = bool(params.get("boundary", False))
    if name == "hyperplane":
        return _hyperplane(dim, int(params.get("axis", 0)), float(params.get("offset", 0.0)), boundary)
    if name in ("circle", "sphere-level"):
        return _circle(dim, float(params.get("radius", 1.0)), params.get("center"), boundary)
    if name == "slab":
        return _slab(dim, int(params.get("axis", 0)), float(params.get("lower", 0.0)),
                     float(params.get("upper", 1.0)), boundary)
    if name == "polynomial":
        poly = params["poly"]
        if not isinstance(poly, Polynomial):
            poly = polynomial_from_terms(dim, poly)
        return _polynomial_surface(poly, boundary, params.get("sample_box", (-2.0, 2.0)))
    raise KeyError(f"unknown hypersurface {name!r}")


def _poly_potential(poly: Polynomial, name="polynomial"):
    return PotentialSpec(poly, poly.grad, poly.hess, None, name=name, is_zero=not poly.terms)


def make_potential(name: str, dim: int = 2, surf: Optional[HypersurfaceSpec] = None, **params) -> PotentialSpec:
    if name == "zero":
        return _poly_potential(Polynomial(dim, ()), name="zero")
    if name == "harmonic":
        k = float(params.get("k", 1.0))
        terms = []
        for i in range(dim):
            e = [0] * dim
            e[i] = 2
            terms.append((0.5 * k, tuple(e)))
        return _poly_potential(Polynomial(dim, tuple(terms)), name="harmonic")
    if name == "polynomial":
        poly = params["poly"]
        if not isinstance(poly, Polynomial):
            poly = polynomial_from_terms(dim, poly)
        return _poly_potential(poly)
    if name == "piecewise-polynomial":
        if surf is None:
            raise ValueError("piecewise potential needs the hypersurface that separates the sides")
        plus = params["plus"]
        minus = params["minus"]
        if not isinstance(plus, Polynomial):
            plus = polynomial_from_terms(dim, plus)
        if not isinstance(minus, Polynomial):
            minus = polynomial_from_terms(dim, minus)
        return piecewise_potential(surf, plus, minus)
    raise KeyError(f"unknown potential {name!r}")


def piecewise_potential(surf: HypersurfaceSpec, plus: Polynomial, minus: Polynomial) -> PotentialSpec:
    """Potential equal to ``plus`` where ``rho >= 0`` and ``minus`` elsewhere.

    C^1 matching is the loader's job (:func:`check_c1_matching`).
    """

    def pick(x):
        return plus if surf.rho(x) >= 0 else minus

    return PotentialSpec(
        v=lambda x: pick(x)(x),
        grad_v=lambda x: pick(x).grad(x),
        hess_v_plus=plus.hess,
        hess_v_minus=minus.hess,
        name="piecewise-polynomial",
    )


def check_c1_matching(surf: HypersurfaceSpec, plus: Polynomial, minus: Polynomial, rng, samples=16, tol=1e-10):
    """Largest value/gradient mismatch of the two sides over sample points of ``Y``."""
    pts = surf.sample_points(samples, rng)
    if len(pts) == 0:
        raise ValueError("could not sample the hypersurface")
    worst = 0.0
    for y in pts:
        worst = max(worst, abs(plus(y) - minus(y)), float(np.max(np.abs(plus.grad(y) - minus.grad(y)))))
    return worst, worst <= tol
