"""Hermitian metric algebra and the Chern connection.

Storage order follows the written index order of every symbol:

=====================  =========================  ==========================
symbol                 array                      component axes
=====================  =========================  ==========================
chi_{kbar j}           ``MetricField.components``  [k, j]
chi^{j kbar}           ``MetricField.inverse``     [j, k]
d_j chi_{rbar q}       ``ChernData.dchi``          [j, r, q]
Gamma^p_{jq}           ``ChernData.gamma``         [p, j, q]
T^p_{jq}               ``ChernData.torsion``       [p, j, q]
T_j = T^p_{pj}         ``ChernData.torsion_one_form``  [j]
R_{kbar j}^p_q         ``ChernData.curvature``     [k, j, p, q]
d_m Gamma^p_{jq}       ``ChernData.dgamma``        [m, p, j, q]
d_mbar Gamma^p_{jq}    ``ChernData.dgamma_bar``    [m, p, j, q]
=====================  =========================  ==========================

A covariant derivative always prepends its direction index, so
``covariant_deriv(V^p, "u", "holo")`` returns nabla_a V^p stored as [a, p].

Derivatives of nonlinear expressions in chi (its inverse, Gamma, R) are formed
by the product rule from spectral derivatives of chi itself.  Spectral
differentiation of chi^{-1} directly would leave an aliasing floor near 1e-4
on a 16^4 grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calculus import Grid, grad_antiholo, grad_holo, random_bandlimited, make_rng

__all__ = [
    "MetricError",
    "MetricField",
    "ChernData",
    "small_inv_det",
    "hermitian_eigvals",
    "generalized_eigvals",
    "build_metric",
    "chern_connection",
    "covariant_deriv",
    "covariant_deriv2",
    "laplacian",
    "check_commutations",
    "metric_compatibility",
]


class MetricError(ValueError):
    """Raised when a metric fails positivity; carries the worst point."""

    def __init__(self, message, point=None, value=None):
        super().__init__(message)
        self.point = point
        self.value = value


# --------------------------------------------------------------------------
# per-point linear algebra, closed form for n <= 3


def small_inv_det(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse and determinant of a stack of n x n matrices (n <= 3) by cofactors."""
    n = m.shape[-1]
    if n == 1:
        det = m[..., 0, 0]
        return (1.0 / det)[..., None, None], det
    if n == 2:
        a, b = m[..., 0, 0], m[..., 0, 1]
        c, d = m[..., 1, 0], m[..., 1, 1]
        det = a * d - b * c
        inv = np.empty(m.shape, dtype=np.result_type(m.dtype, float))
        r = 1.0 / det
        inv[..., 0, 0] = d * r
        inv[..., 0, 1] = -b * r
        inv[..., 1, 0] = -c * r
        inv[..., 1, 1] = a * r
        return inv, det
    if n == 3:
        adj = np.empty_like(m)
        for i in range(3):
            for j in range(3):
                r = [x for x in range(3) if x != j]
                c = [x for x in range(3) if x != i]
                minor = (m[..., r[0], c[0]] * m[..., r[1], c[1]]
                         - m[..., r[0], c[1]] * m[..., r[1], c[0]])
                adj[..., i, j] = (-1) ** (i + j) * minor
        det = np.einsum("...j,...j->...", m[..., 0, :], adj[..., :, 0])
        return adj / det[..., None, None], det
    raise ValueError(f"closed forms cover n <= 3, got {n}")


def adjugate(m: np.ndarray) -> np.ndarray:
    inv, det = small_inv_det(m)
    return inv * det[..., None, None]


def hermitian_eigvals(m: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a stack of Hermitian matrices."""
    n = m.shape[-1]
    if n == 1:
        return m[..., 0, :].real
    if n == 2:
        a, d = m[..., 0, 0].real, m[..., 1, 1].real
        b = m[..., 0, 1]
        mid = 0.5 * (a + d)
        rad = np.sqrt((0.5 * (a - d)) ** 2 + (b.real**2 + b.imag**2))
        out = np.empty(m.shape[:-1])
        out[..., 0] = mid - rad
        out[..., 1] = mid + rad
        return out
    return np.linalg.eigvalsh(m)


def generalized_eigvals(g: np.ndarray, chi: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of h = chi^{-1} g for Hermitian g and positive chi."""
    n = g.shape[-1]
    if n == 1:
        return (g[..., 0, 0] / chi[..., 0, 0]).real[..., None]
    lower = np.linalg.cholesky(chi)
    linv = small_inv_det(lower)[0]
    s = linv @ g @ np.conj(np.swapaxes(linv, -1, -2))
    s = 0.5 * (s + np.conj(np.swapaxes(s, -1, -2)))
    return hermitian_eigvals(s)


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricField:
    grid: Grid
    components: np.ndarray
    inverse: np.ndarray
    det: np.ndarray
    min_eig: np.ndarray

    @property
    def n(self) -> int:
        return self.grid.n


def _worst(grid, field):
    idx = np.unravel_index(np.argmin(field), grid.shape)
    return tuple(int(i) for i in idx), float(field[idx])


def build_metric(grid: Grid, components, check: bool = True) -> MetricField:
    """Validate a Hermitian (kbar, j) field and cache inverse, det and min eigenvalue."""
    comps = np.asarray(components, dtype=complex)
    n = grid.n
    if comps.ndim == 2:
        comps = np.broadcast_to(comps, grid.shape + (n, n)).copy()
    if comps.shape != grid.shape + (n, n):
        raise ValueError(f"metric shape {comps.shape} does not match grid")
    herm_err = np.abs(comps - np.conj(np.swapaxes(comps, -1, -2))).max()
    if herm_err > 1e-12 * max(1.0, np.abs(comps).max()):
        raise MetricError(f"metric is not Hermitian (error {herm_err:.3e})")
    eig = hermitian_eigvals(comps)[..., 0]
    if check and eig.min() <= 0:
        pt, val = _worst(grid, eig)
        raise MetricError(f"metric not positive definite: eigenvalue {val:.6g} at {pt}",
                          point=pt, value=val)
    inv, det = small_inv_det(comps)
    return MetricField(grid, comps, inv, det.real, eig)


# --------------------------------------------------------------------------
# Chern connection


@dataclass(frozen=True)
class ChernData:
    dchi: np.ndarray
    dchi_bar: np.ndarray
    gamma: np.ndarray
    torsion: np.ndarray
    torsion_one_form: np.ndarray
    curvature: np.ndarray
    scalar_like: np.ndarray
    dgamma: np.ndarray
    dgamma_bar: np.ndarray

    def torsion_deriv(self, antiholo: bool) -> np.ndarray:
        """d_m T^p_{jq} (or d_mbar) stored [m, p, j, q], by the product rule."""
        dg = self.dgamma_bar if antiholo else self.dgamma
        return dg - np.swapaxes(dg, -1, -2)


def chern_connection(grid: Grid, metric: MetricField) -> ChernData:
    chi, inv = metric.components, metric.inverse
    dchi = grad_holo(grid, chi)                  # [j, r, q]
    dchi_bar = grad_antiholo(grid, chi)          # [k, r, q]
    dd_hh = grad_holo(grid, dchi)                # [m, j, r, q] = d_m d_j chi
    dd_bh = grad_antiholo(grid, dchi)            # [m, j, r, q] = d_mbar d_j chi

    gamma = np.einsum("...pr,...jrq->...pjq", inv, dchi)
    torsion = gamma - np.swapaxes(gamma, -1, -2)
    t1 = np.einsum("...ppj->...j", torsion)

    # d(chi^{-1}) = -chi^{-1} (d chi) chi^{-1}
    dinv = -np.einsum("...pa,...mab,...br->...mpr", inv, dchi, inv)
    dinv_bar = -np.einsum("...pa,...mab,...br->...mpr", inv, dchi_bar, inv)
    dgamma = (np.einsum("...mpr,...jrq->...mpjq", dinv, dchi)
              + np.einsum("...pr,...mjrq->...mpjq", inv, dd_hh))
    dgamma_bar = (np.einsum("...mpr,...jrq->...mpjq", dinv_bar, dchi)
                  + np.einsum("...pr,...mjrq->...mpjq", inv, dd_bh))

    curvature = -np.einsum("...kpjq->...kjpq", dgamma_bar)
    # R' = R^q_p^p_q = chi^{q kbar} R_{kbar p}^p_q
    rprime = np.einsum("...qk,...kppq->...", inv, curvature)
    return ChernData(dchi, dchi_bar, gamma, torsion, t1, curvature, rprime,
                     dgamma, dgamma_bar)


_LETTERS = "cdefgh"


def _conn(coef, values, sig, upper, lower, ncomp_offset=0):
    """Sum of connection terms for every index of ``sig``.

    ``coef`` is [p, a, q]; kinds in ``upper`` get +coef^p_{aq} V^q and kinds in
    ``lower`` get -coef^p_{aq} V_p.  The direction index ``a`` is prepended.
    """
    r = len(sig)
    comps = _LETTERS[:r]
    out = None
    for i, kind in enumerate(sig):
        if kind in upper:
            vin = comps[:i] + "y" + comps[i + 1:]
            spec = f"...{comps[i]}ay,...{vin}->...a{comps}"
            term = np.einsum(spec, coef, values)
        elif kind in lower:
            vin = comps[:i] + "y" + comps[i + 1:]
            spec = f"...ya{comps[i]},...{vin}->...a{comps}"
            term = -np.einsum(spec, coef, values)
        else:
            continue
        out = term if out is None else out + term
    return out


def _coef(chern: ChernData, direction: str):
    if direction == "holo":
        return chern.gamma, "u", "l"
    if direction == "antiholo":
        return np.conj(chern.gamma), "B", "b"
    raise ValueError(f"direction must be 'holo' or 'antiholo', got {direction!r}")


def _check_sig(grid, values, sig):
    if set(sig) - set("lbuB"):
        raise ValueError(f"unsupported signature {sig!r}")
    if len(sig) > 3:
        raise ValueError("covariant derivatives support rank <= 3")
    if values.shape != grid.shape + (grid.n,) * len(sig):
        raise ValueError(f"field shape {values.shape} does not match signature {sig!r}")


def covariant_deriv(grid: Grid, values: np.ndarray, sig: str, direction: str,
                    chern: ChernData, partial: np.ndarray | None = None) -> np.ndarray:
    """Chern covariant derivative in every holo (or antiholo) direction.

    Holomorphic directions act on holo indices through Gamma and leave
    antiholo indices alone; antiholomorphic directions act on antiholo indices
    through conj(Gamma).  ``partial`` may supply exact partial derivatives
    (direction index first) in place of spectral ones.
    """
    _check_sig(grid, values, sig)
    coef, up, lo = _coef(chern, direction)
    if partial is None:
        partial = (grad_holo if direction == "holo" else grad_antiholo)(grid, values)
    terms = _conn(coef, values, sig, up, lo)
    return partial if terms is None else partial + terms


def covariant_deriv2(grid: Grid, values: np.ndarray, sig: str, inner: str,
                     outer: str, chern: ChernData) -> np.ndarray:
    """nabla_b nabla_a V stored [b, a, ...], exact for band-limited V.

    The partial derivative of the inner covariant derivative is expanded by the
    product rule using the analytic derivatives of Gamma.
    """
    _check_sig(grid, values, sig)
    gin = grad_holo if inner == "holo" else grad_antiholo
    gout = grad_holo if outer == "holo" else grad_antiholo
    coef_in, up_in, lo_in = _coef(chern, inner)

    dv_in = gin(grid, values)                        # [a, ...]
    w = covariant_deriv(grid, values, sig, inner, chern, partial=dv_in)
    w_sig = ("l" if inner == "holo" else "b") + sig

    if inner == "holo":
        dcoef = chern.dgamma if outer == "holo" else chern.dgamma_bar
    else:
        dcoef = np.conj(chern.dgamma_bar if outer == "holo" else chern.dgamma)
    dv_out = gout(grid, values)                      # [b, ...]
    ax = grid.ndim
    dw = gout(grid, dv_in)                           # [b, a, ...]
    t1 = _conn(dcoef, np.expand_dims(values, ax), sig, up_in, lo_in)
    t2 = _conn(np.expand_dims(coef_in, ax), dv_out, sig, up_in, lo_in)
    if t1 is not None:
        dw = dw + t1 + t2
    return covariant_deriv(grid, w, w_sig, outer, chern, partial=dw)


def laplacian(grid: Grid, metric: MetricField, f: np.ndarray) -> np.ndarray:
    """chi^{j kbar} d_j d_kbar f; connection terms vanish on this mixed second derivative."""
    dd = grad_holo(grid, grad_antiholo(grid, f))     # [j, k]
    return np.einsum("...jk,...jk->...", metric.inverse, dd)


def metric_compatibility(grid: Grid, metric: MetricField, chern: ChernData) -> float:
    """max |nabla chi| / max |d chi| over both directions."""
    chi = metric.components
    worst, scale = 0.0, 0.0
    for direction, part in (("holo", chern.dchi), ("antiholo", chern.dchi_bar)):
        nab = covariant_deriv(grid, chi, "bl", direction, chern, partial=part)
        worst = max(worst, np.abs(nab).max())
        scale = max(scale, np.abs(part).max())
    return worst / scale if scale > 0 else worst


def _rel(lhs, rhs, *scales):
    s = max([np.abs(x).max() for x in scales] + [1e-300])
    return float(np.abs(lhs - rhs).max() / max(s, 1e-300)) if s > 1e-300 else float(
        np.abs(lhs - rhs).max())


def check_commutations(grid: Grid, metric: MetricField, seed, max_mode: int = 2,
                       amplitude: float = 1.0, chern: ChernData | None = None) -> dict:
    """Residuals of the four curvature/torsion commutation identities.

    Returns max |LHS - RHS| / max(|nabla nabla| terms) per identity:

    ``vector``  [nabla_j, nabla_kbar] V^p = R_{kbar j}^p_q V^q
    ``CR1``     [nabla_qbar, nabla_kbar] u_j = -nabla_sbar u_j conj(T^s_{qk})
    ``CR2``     [nabla_p, nabla_kbar] u_{qbar j}
                  = u_{sbar j} conj(R_{pbar k}^s_q) - u_{qbar r} R_{kbar p}^r_j
    ``CR3``     [nabla_p, nabla_j] u_qbar = -d_r u_qbar T^r_{pj}
    """
    if chern is None:
        chern = chern_connection(grid, metric)
    rng = make_rng(seed)
    n = grid.n
    vec = np.stack([random_bandlimited(grid, max_mode, amplitude, rng, "complex")
                    for _ in range(n)], axis=-1)
    u = random_bandlimited(grid, max_mode, amplitude, rng, "real")
    R = chern.curvature
    T = chern.torsion
    out = {}

    a = covariant_deriv2(grid, vec, "u", "antiholo", "holo", chern)   # [j, k, p]
    b = covariant_deriv2(grid, vec, "u", "holo", "antiholo", chern)   # [k, j, p]
    lhs = a - np.swapaxes(b, -3, -2)
    rhs = np.einsum("...kjpq,...q->...jkp", R, vec)
    out["vector"] = _rel(lhs, rhs, a, b)

    u_j = grad_holo(grid, u)                                          # [j]
    a = covariant_deriv2(grid, u_j, "l", "antiholo", "antiholo", chern)  # [q, k, j]
    lhs = a - np.swapaxes(a, -3, -2)
    du_j_bar = covariant_deriv(grid, u_j, "l", "antiholo", chern)     # [s, j]
    rhs = -np.einsum("...sj,...sqk->...qkj", du_j_bar, np.conj(T))
    out["CR1"] = _rel(lhs, rhs, a)

    u_kj = grad_antiholo(grid, u_j)                                   # [q, j] = u_{qbar j}
    a = covariant_deriv2(grid, u_kj, "bl", "antiholo", "holo", chern)  # [p, k, q, j]
    b = covariant_deriv2(grid, u_kj, "bl", "holo", "antiholo", chern)  # [k, p, q, j]
    lhs = a - np.swapaxes(b, -4, -3)
    rbar = np.conj(R)                                                 # [p, k, s, q] -> conj R_{pbar k}^s_q
    rhs = (np.einsum("...sj,...pksq->...pkqj", u_kj, rbar)
           - np.einsum("...qr,...kprj->...pkqj", u_kj, R))
    out["CR2"] = _rel(lhs, rhs, a, b)

    u_q = grad_antiholo(grid, u)                                      # [q]
    a = covariant_deriv2(grid, u_q, "b", "holo", "holo", chern)       # [p, j, q]
    lhs = a - np.swapaxes(a, -3, -2)
    du_q = grad_holo(grid, u_q)                                       # [r, q]
    rhs = -np.einsum("...rq,...rpj->...pjq", du_q, T)
    out["CR3"] = _rel(lhs, rhs, a)
    return out
