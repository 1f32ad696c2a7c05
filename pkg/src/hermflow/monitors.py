"""A-priori-estimate diagnostics and numerical checks of the evolution identities.

The left-hand sides (d_t - L) Q are formed from three potentials
u(t - dt), u(t), u(t + dt) by a centered difference in time, with L applied
spectrally at the middle state.  Right-hand sides come from exact first
derivatives (see :mod:`hermflow.pair`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import grad_holo, weighted_mean
from .flow import (FlowProblem, FlowState, Geometry, advance, apply_L, assemble,
                   normalize, Convergence)
from .pair import PairGeometry, gnorm

__all__ = [
    "MonitorConfig",
    "MonitorRecord",
    "IdentityResidual",
    "monitor_H",
    "monitor_traces",
    "test_function_G",
    "c2_diag",
    "record",
    "bracket",
    "evolution_identity_H",
    "evolution_identity_logTrh",
    "evolution_identity_G",
    "identity_rhs_G",
    "refinement_orders",
    "identity_checks",
    "ToleranceModel",
    "calibrate",
    "fit_tolerance_model",
    "CSV_COLUMNS",
]


@dataclass(frozen=True)
class MonitorConfig:
    A: float = 10.0
    B: float = 5.0
    identity_cadence: int = 16
    identity_dt: float = 2e-3

    def __post_init__(self):
        if not (self.A > 1 and self.B > 1):
            raise ValueError("A and B must both exceed 1")
        if self.identity_cadence < 0:
            raise ValueError("identity_cadence must be >= 0")


CSV_COLUMNS = ("t", "dt", "H_min", "H_max", "trh_max", "trh_inv_max", "mineig_h_min",
               "r1_stddevH", "r2_sup_dtphi", "G_max", "c2_diag", "c_estimate")


@dataclass
class MonitorRecord:
    step: int
    t: float
    dt: float
    H_min: float
    H_max: float
    trh_min: float
    trh_max: float
    trh_inv_min: float
    trh_inv_max: float
    mineig_h_min: float
    amgm_margin: float
    amgm_inv_margin: float
    G_max: float
    c2_diag: float
    r1: float
    r2: float
    c_estimate: float
    sup_dtu: float
    identity: dict = field(default_factory=dict)

    def csv_row(self) -> list[str]:
        vals = (self.t, self.dt, self.H_min, self.H_max, self.trh_max, self.trh_inv_max,
                self.mineig_h_min, self.r1, self.r2, self.G_max, self.c2_diag,
                self.c_estimate)
        return [repr(float(v)) for v in vals]


@dataclass(frozen=True)
class IdentityResidual:
    name: str
    residual: float
    dt: float
    grid: tuple
    expected_order: float = 2.0
    step: int = -1
    skipped: bool = False
    imag_ratio: float = 0.0

    def line(self) -> str:
        flag = " skipped" if self.skipped else ""
        return (f"{self.name} step={self.step} dt={self.dt:.6e} residual={self.residual:.6e} "
                f"grid={'x'.join(map(str, self.grid))} order={self.expected_order:g}{flag}")


# --------------------------------------------------------------------------
# scalar monitors


def monitor_H(state: FlowState) -> tuple[float, float]:
    H = state.geom.H
    return float(H.min()), float(H.max())


def monitor_traces(state: FlowState, n: int):
    """(min Tr h, min Tr h^-1, AM-GM margin of h, AM-GM margin of h^-1)."""
    geom = state.geom
    d = geom.det_h
    margin = geom.tr_h - n * d ** (1.0 / n)
    margin_inv = geom.tr_h_inv - n * d ** (-1.0 / n)
    return (float(geom.tr_h.min()), float(geom.tr_h_inv.min()),
            float(margin.min()), float(margin_inv.min()))


def test_function_G(problem: FlowProblem, state: FlowState, cfg: MonitorConfig,
                    inf_phi: float | None = None):
    """G = log Tr h - A phi + 1/(phi - inf phi + 1) + B/2 F(H)^2; returns (field, max)."""
    m = state.running_inf_phi if inf_phi is None else inf_phi
    G = _G_field(problem, state.phi, state.geom, cfg, m)
    return G, float(G.max())


# keeps pytest from collecting the function above as a test
test_function_G.__test__ = False


def _G_field(problem, phi, geom, cfg, inf_phi):
    FH = problem.F.eval(geom.H)
    return (np.log(geom.tr_h) - cfg.A * phi + 1.0 / (phi - inf_phi + 1.0)
            + 0.5 * cfg.B * FH**2)


def c2_diag(state: FlowState, cfg: MonitorConfig) -> float:
    """max over the grid of log Tr h - A (phi - inf phi)."""
    return float(np.max(np.log(state.geom.tr_h) - cfg.A * (state.phi - state.running_inf_phi)))


def record(problem: FlowProblem, state: FlowState, cfg: MonitorConfig,
           conv: Convergence, dt: float) -> MonitorRecord:
    geom = state.geom
    hmin, hmax = monitor_H(state)
    trmin, trinvmin, margin, margin_inv = monitor_traces(state, problem.n)
    _, gmax = test_function_G(problem, state, cfg)
    return MonitorRecord(
        step=state.step_index, t=state.t, dt=dt, H_min=hmin, H_max=hmax,
        trh_min=trmin, trh_max=float(geom.tr_h.max()),
        trh_inv_min=trinvmin, trh_inv_max=float(geom.tr_h_inv.max()),
        mineig_h_min=float(geom.min_eig_h.min()),
        amgm_margin=margin, amgm_inv_margin=margin_inv,
        G_max=gmax, c2_diag=c2_diag(state, cfg), r1=conv.r1, r2=conv.r2,
        c_estimate=conv.c_mean, sup_dtu=float(np.abs(problem.F.eval(geom.H)).max()),
    )


# --------------------------------------------------------------------------
# evolution identities


@dataclass
class Bracket:
    """Potentials at t - dt, t, t + dt with their geometry cached on first use."""

    u_minus: np.ndarray
    u_mid: np.ndarray
    u_plus: np.ndarray
    dt: float
    _cache: dict = field(default_factory=dict, repr=False)

    def geoms(self, problem):
        if "geoms" not in self._cache:
            self._cache["geoms"] = tuple(assemble(problem, u)
                                         for u in (self.u_minus, self.u_mid, self.u_plus))
        return self._cache["geoms"]

    def parts(self, problem):
        if "parts" not in self._cache:
            self._cache["parts"] = _log_trh_parts(problem, self.u_mid)
        return self._cache["parts"]

    def phis(self, problem):
        if "phis" not in self._cache:
            self._cache["phis"] = tuple(normalize(problem.grid, u, problem.chi)
                                        for u in (self.u_minus, self.u_mid, self.u_plus))
        return self._cache["phis"]


def bracket(problem: FlowProblem, u: np.ndarray, dt: float, scheme: str = "rk2") -> Bracket:
    """States one explicit step before and after ``u``."""
    return Bracket(advance(problem, u, -dt, scheme), u, advance(problem, u, dt, scheme), dt)


def _tdiff(qm, qp, dt):
    return (qp - qm) / (2.0 * dt)


def _chi_inner(inv, a, b):
    """chi^{j kbar} d_j a d_kbar b for real a, b given their holo gradients."""
    return np.einsum("...jk,...j,...k->...", inv, a, np.conj(b))


def _residual(lhs, rhs):
    return float(np.abs(lhs - rhs).max() / max(1.0, np.abs(rhs).max()))


def evolution_identity_H(problem: FlowProblem, br: Bracket, step: int = -1) -> IdentityResidual:
    """(d_t - L) H = F'' H g^{j kbar} d_j H d_kbar H."""
    grid = problem.grid
    gm, g0, gp = br.geoms(problem)
    lhs = _tdiff(gm.H, gp.H, br.dt) - apply_L(problem, g0, g0.H).real
    dH = br.parts(problem).dH
    rhs = problem.F.d2(g0.H) * g0.H * gnorm(g0.g_inv, dH, dH).real
    return IdentityResidual("lemma_H", _residual(lhs, rhs), br.dt, grid.sizes, 2.0, step)


@dataclass
class _RhsParts:
    bracket_sum: np.ndarray     # the braced expression, complex
    prefactor: np.ndarray       # F' e^{-f} det h / Tr h
    pair: PairGeometry
    geom: Geometry
    dphi: np.ndarray
    dH: np.ndarray
    dF: np.ndarray


def _log_trh_parts(problem: FlowProblem, u: np.ndarray) -> _RhsParts:
    grid, chi = problem.grid, problem.chi
    chern = problem.chern()
    geom = assemble(problem, u)
    pg = PairGeometry.from_potential(grid, chi, chern, u)
    inv, ginv, uu = chi.inverse, pg.g_inv, pg.u
    T = chern.torsion
    dT_bar = chern.torsion_deriv(antiholo=True)          # d_kbar T^r_{pj}: [k, r, p, j]
    F = problem.F
    H, D = geom.H, geom.det_h
    f = problem.f
    Fp, Fpp = F.d1(H), F.d2(H)
    ef = np.exp(-f)

    dtr = pg.dtr_h
    dD = D[..., None] * pg.dlog_det_h
    df = grad_holo(grid, f)
    from .chern import laplacian
    lap_f = laplacian(grid, chi, f).real

    terms = [
        gnorm(ginv, dtr, dtr) / pg.tr_h,
        -np.einsum("...pq,...jk,...rs,...pkr,...qsj->...", inv, ginv, ginv,
                   pg.nab_g, pg.nab_g_bar, optimize=True),
        -np.einsum("...pq,...jk,...psj,...sqk->...", inv, ginv, pg.nab_g, np.conj(T),
                   optimize=True),
        -np.einsum("...pq,...jk,...kqr,...rpj->...", inv, ginv, pg.nab_g_bar, T,
                   optimize=True),
        # nabla_p conj(T^s_{qk}) = conj(d_pbar T^s_{qk})
        -np.einsum("...pq,...jk,...sj,...psqk->...", inv, ginv, uu, np.conj(dT_bar),
                   optimize=True),
        -np.einsum("...pq,...jk,...qr,...krpj->...", inv, ginv, uu, dT_bar, optimize=True),
        (1.0 / D**2 + Fpp * ef / (Fp * D)) * _chi_inner(inv, dD, dD),
        -(1.0 / D + Fpp * ef / Fp) * 2.0 * _chi_inner(inv, dD, df).real,
        Fpp * ef * D / Fp * _chi_inner(inv, df, df),
        -lap_f + _chi_inner(inv, df, df),
        chern.scalar_like,
        -np.einsum("...jk,...ka,...apqj,...pq->...", pg.h_inv, inv, chern.curvature, pg.h,
                   optimize=True),
    ]
    total = sum(np.asarray(t, dtype=complex) for t in terms)
    dphi = grad_holo(grid, u)
    dH = H[..., None] * (pg.dlog_det_h - df)
    dF = Fp[..., None] * dH
    return _RhsParts(total, Fp * H / geom.tr_h, pg, geom, dphi, dH, dF)


def evolution_identity_logTrh(problem: FlowProblem, br: Bracket,
                              step: int = -1) -> IdentityResidual:
    """(d_t - L) log Tr h against its torsion-and-curvature expansion."""
    gm, g0, gp = br.geoms(problem)
    q0 = np.log(g0.tr_h)
    lhs = _tdiff(np.log(gm.tr_h), np.log(gp.tr_h), br.dt) - apply_L(problem, g0, q0).real
    parts = br.parts(problem)
    rhs = parts.prefactor * parts.bracket_sum
    re = np.abs(rhs.real).max()
    ratio = float(np.abs(rhs.imag).max() / re) if re > 0 else float(np.abs(rhs.imag).max())
    return IdentityResidual("log_trh", _residual(lhs, rhs.real), br.dt, problem.grid.sizes,
                            2.0, step, imag_ratio=ratio)


def identity_rhs_G(problem: FlowProblem, u: np.ndarray, cfg: MonitorConfig,
                   inf_phi: float, parts: _RhsParts | None = None) -> np.ndarray:
    """Complex right-hand side of (d_t - L) G summed term by term."""
    grid, chi = problem.grid, problem.chi
    n = grid.n
    parts = parts or _log_trh_parts(problem, u)
    geom = parts.geom
    H = geom.H
    FH = problem.F.eval(H)
    FpH = problem.F.d1(H) * H
    phi = normalize(grid, u, chi)
    dt_phi = FH - weighted_mean(grid, chi.det, FH)
    psi = phi - inf_phi + 1.0
    ginv = parts.pair.g_inv
    A, B = cfg.A, cfg.B
    total = parts.prefactor * parts.bracket_sum
    total = total - A * dt_phi + A * n * FpH - A * FpH * geom.tr_h_inv
    total = total - dt_phi / psi**2 - 2.0 * FpH / psi**3 * gnorm(ginv, parts.dphi, parts.dphi)
    total = total + n * FpH / psi**2 - FpH / psi**2 * geom.tr_h_inv
    total = total - B * FpH * gnorm(ginv, parts.dF, parts.dF)
    return total


def evolution_identity_G(problem: FlowProblem, br: Bracket, cfg: MonitorConfig,
                         inf_phi: float, step: int = -1) -> IdentityResidual:
    """(d_t - L) G with inf phi held fixed across the bracket.

    Reported as skipped if phi dips below ``inf_phi`` inside the bracket, since
    the running infimum would then move.
    """
    grid = problem.grid
    phis = br.phis(problem)
    if min(float(p.min()) for p in phis) < inf_phi:
        return IdentityResidual("G", math.nan, br.dt, grid.sizes, 2.0, step, skipped=True)
    geoms = br.geoms(problem)
    Gs = [_G_field(problem, p, g, cfg, inf_phi) for p, g in zip(phis, geoms)]
    lhs = _tdiff(Gs[0], Gs[2], br.dt) - apply_L(problem, geoms[1], Gs[1]).real
    rhs = identity_rhs_G(problem, br.u_mid, cfg, inf_phi, br.parts(problem))
    re = np.abs(rhs.real).max()
    ratio = float(np.abs(rhs.imag).max() / re) if re > 0 else float(np.abs(rhs.imag).max())
    return IdentityResidual("G", _residual(lhs, rhs.real), br.dt, grid.sizes, 2.0, step,
                            imag_ratio=ratio)


def _bracket_inf(problem, br, state_inf):
    return min([state_inf] + [float(p.min()) for p in br.phis(problem)])


def run_identity(name: str, problem: FlowProblem, u: np.ndarray, dt: float,
                 cfg: MonitorConfig, scheme: str = "rk2", inf_phi: float | None = None,
                 step: int = -1, br: Bracket | None = None) -> IdentityResidual:
    br = br or bracket(problem, u, dt, scheme)
    if name == "lemma_H":
        return evolution_identity_H(problem, br, step)
    if name == "log_trh":
        return evolution_identity_logTrh(problem, br, step)
    if name == "G":
        base = float(normalize(problem.grid, u, problem.chi).min()) if inf_phi is None else inf_phi
        return evolution_identity_G(problem, br, cfg, _bracket_inf(problem, br, base), step)
    raise ValueError(f"unknown identity {name!r}")


IDENTITIES = ("lemma_H", "log_trh", "G")


def refinement_orders(problem: FlowProblem, u: np.ndarray, name: str, dt0: float,
                      cfg: MonitorConfig | None = None, scheme: str = "rk2",
                      levels: int = 3):
    """Residuals at dt0, dt0/2, ... and the observed orders log2(r_k / r_{k+1}).

    The infimum of phi is frozen at one value below every bracket used, so all
    levels see the same test function.
    """
    cfg = cfg or MonitorConfig()
    inf_phi = None
    if name == "G":
        inf_phi = min(_bracket_inf(problem, bracket(problem, u, dt0 / 2**k, scheme),
                                   float(normalize(problem.grid, u, problem.chi).min()))
                      for k in range(levels))
    res = [run_identity(name, problem, u, dt0 / 2**k, cfg, scheme, inf_phi)
           for k in range(levels)]
    r = [x.residual for x in res]
    orders = [math.log2(r[k] / r[k + 1]) if r[k + 1] > 0 else math.inf
              for k in range(levels - 1)]
    return res, orders


def fit_tolerance_model(dts, residuals):
    """Nonnegative least-squares fit residual ~ C1 dt^2 + C2."""
    from scipy.optimize import nnls
    a = np.column_stack([np.asarray(dts, float) ** 2, np.ones(len(dts))])
    coef, _ = nnls(a, np.asarray(residuals, float))
    return float(coef[0]), float(coef[1])


@dataclass(frozen=True)
class ToleranceModel:
    """Accept a residual r at step dt when r <= factor * (C1 dt^2 + C2)."""

    C1: float
    C2: float
    factor: float = 4.0

    def bound(self, dt: float) -> float:
        return self.factor * (self.C1 * dt * dt + self.C2)

    def ok(self, report: IdentityResidual) -> bool:
        return report.skipped or report.residual <= self.bound(report.dt)


def calibrate(problem: FlowProblem, u: np.ndarray, dt0: float,
              cfg: MonitorConfig | None = None, scheme: str = "rk2",
              levels: int = 4) -> dict:
    """Refinement sweep at one state; returns {identity name: ToleranceModel}."""
    out = {}
    for name in IDENTITIES:
        res, _ = refinement_orders(problem, u, name, dt0, cfg, scheme, levels)
        live = [r for r in res if not r.skipped and math.isfinite(r.residual)]
        if len(live) < 2:
            continue
        out[name] = ToleranceModel(*fit_tolerance_model([r.dt for r in live],
                                                        [r.residual for r in live]))
    return out


def identity_checks(problem: FlowProblem, state: FlowState, cfg: MonitorConfig,
                    scheme: str = "rk2", dt: float | None = None) -> list[IdentityResidual]:
    """All three identities on one shared bracket around the current state.

    The bracket uses ``min(cfg.identity_dt, dt)``; if it cannot be formed (a
    bracket state loses positivity) every identity is reported as skipped.
    """
    dt = cfg.identity_dt if dt is None else min(cfg.identity_dt, dt)
    try:
        br = bracket(problem, state.u, dt, scheme)
        br.geoms(problem)
    except (ValueError, FloatingPointError):
        return [IdentityResidual(name, math.nan, dt, problem.grid.sizes, 2.0,
                                 state.step_index, skipped=True) for name in IDENTITIES]
    return [run_identity(name, problem, state.u, dt, cfg, scheme, state.running_inf_phi,
                         state.step_index, br) for name in IDENTITIES]
