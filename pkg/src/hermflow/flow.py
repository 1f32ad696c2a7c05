"""Explicit time stepping of  d_t u = F(e^{-f} det h)  on a flat Hermitian torus."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .calculus import Grid, TensorField, weighted_mean, integrate, write_snapshot
from .chern import (MetricError, MetricField, ChernData, chern_connection,
                    hermitian_eigvals, small_inv_det)

log = logging.getLogger(__name__)

__all__ = [
    "FFamily",
    "StepPolicy",
    "FlowProblem",
    "Geometry",
    "FlowState",
    "FlowReport",
    "StepFailure",
    "FlowDomainError",
    "ddbar",
    "assemble",
    "rhs",
    "linearized_coeff",
    "propose_dt",
    "step",
    "advance",
    "normalize",
    "initial_state",
    "converge_check",
    "run_flow",
]

SCHEMES = ("euler", "rk2", "rk4")


class FlowDomainError(ValueError):
    """H left (0, inf) or became non-finite."""


class StepFailure(RuntimeError):
    def __init__(self, message, state=None, dt_history=()):
        super().__init__(message)
        self.state = state
        self.dt_history = list(dt_history)


# --------------------------------------------------------------------------
# nonlinearity


@dataclass(frozen=True)
class FFamily:
    """Strictly increasing F on (0, inf) with first and second derivatives.

    ``power`` is (s**alpha - 1) / alpha so that alpha -> 0 recovers ``log``.
    """

    kind: str = "log"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("log", "power", "exp", "neg-inverse"):
            raise ValueError(f"unknown F kind {self.kind!r}")
        if self.kind == "power" and not self.alpha > 0:
            raise ValueError("power family needs alpha > 0")

    @classmethod
    def parse(cls, spec) -> "FFamily":
        """Accept 'log', 'exp', 'neg-inverse', 'power(2)' or a dict."""
        if isinstance(spec, FFamily):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], float(spec.get("alpha", 1.0)))
        s = str(spec).strip()
        if s.startswith("power"):
            inner = s[len("power"):].strip("() ")
            return cls("power", float(inner) if inner else 1.0)
        return cls(s)

    @property
    def label(self) -> str:
        return f"power({self.alpha:g})" if self.kind == "power" else self.kind

    def __call__(self, s):
        return self.eval(s)

    def eval(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "log":
            return np.log(s)
        if self.kind == "power":
            return np.expm1(self.alpha * np.log(s)) / self.alpha
        if self.kind == "exp":
            return np.exp(s)
        return -1.0 / s

    def d1(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "log":
            return 1.0 / s
        if self.kind == "power":
            return s ** (self.alpha - 1.0)
        if self.kind == "exp":
            return np.exp(s)
        return 1.0 / s**2

    def d2(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "log":
            return -1.0 / s**2
        if self.kind == "power":
            return (self.alpha - 1.0) * s ** (self.alpha - 2.0)
        if self.kind == "exp":
            return np.exp(s)
        return -2.0 / s**3

    def max_abs_on(self, lo: float, hi: float) -> float:
        # monotone, so the extremes of |F| sit at the interval ends
        return float(max(abs(self.eval(lo)), abs(self.eval(hi))))


@dataclass(frozen=True)
class StepPolicy:
    scheme: str = "rk2"
    safety: float = 0.25
    max_retries: int = 8
    t_max: float = 10.0
    tol_H_stddev: float = 1e-6
    tol_dtphi: float = 1e-6
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not 0 < self.safety <= 1:
            raise ValueError("safety must lie in (0, 1]")
        if self.tol_H_stddev <= 0 or self.tol_dtphi <= 0:
            raise ValueError("tolerances must be positive")


# --------------------------------------------------------------------------
# geometry of a potential


@dataclass(frozen=True)
class FlowProblem:
    """Fixed data of a run: grid, background metric chi, f and F."""

    grid: Grid
    chi: MetricField
    f: np.ndarray
    F: FFamily

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def weight(self) -> np.ndarray:
        return self.chi.det

    @property
    def exp_neg_f(self) -> np.ndarray:
        cached = self.__dict__.get("_exp_neg_f")
        if cached is None:
            cached = np.exp(-self.f)
            object.__setattr__(self, "_exp_neg_f", cached)
        return cached

    @property
    def mean_exp_f(self) -> float:
        cached = self.__dict__.get("_mean_exp_f")
        if cached is None:
            cached = self.mean(np.exp(self.f))
            object.__setattr__(self, "_mean_exp_f", cached)
        return cached

    def mean(self, f: np.ndarray) -> float:
        """det chi-weighted average of a real field (same value as calculus.weighted_mean)."""
        wn = self.__dict__.get("_wnorm")
        if wn is None:
            w = np.broadcast_to(self.chi.det, self.grid.shape).ravel()
            wn = w / w.sum()
            object.__setattr__(self, "_wnorm", wn)
        return float(wn @ np.asarray(f, dtype=float).ravel())

    def _chi_parts(self) -> dict:
        """Contiguous real arrays of chi and chi^{-1} entries used by the n <= 2 kernels."""
        cached = self.__dict__.get("_chi_cache")
        if cached is None:
            c, i = self.chi.components, self.chi.inverse
            cached = {"c00": np.ascontiguousarray(c[..., 0, 0].real),
                      "i00": np.ascontiguousarray(i[..., 0, 0].real)}
            if self.n == 2:
                cached.update(
                    c11=np.ascontiguousarray(c[..., 1, 1].real),
                    c01r=np.ascontiguousarray(c[..., 0, 1].real),
                    c01i=np.ascontiguousarray(c[..., 0, 1].imag),
                    i11=np.ascontiguousarray(i[..., 1, 1].real),
                    i10r=np.ascontiguousarray(i[..., 1, 0].real),
                    i10i=np.ascontiguousarray(i[..., 1, 0].imag))
            object.__setattr__(self, "_chi_cache", cached)
        return cached

    def chern(self) -> ChernData:
        cached = self.__dict__.get("_chern")
        if cached is None:
            cached = chern_connection(self.grid, self.chi)
            object.__setattr__(self, "_chern", cached)
        return cached


class Geometry:
    """Pointwise geometry of g = chi + i ddbar u.

    det h and H are computed eagerly; the remaining scalar fields and the
    tensor fields ``u_kj``, ``g`` (layout [..., k, j]) and ``g_inv`` ([..., j, k])
    are built on first access, so an intermediate Runge-Kutta stage only pays
    for what the right-hand side needs.
    """

    def __init__(self, problem, parts, det_h, H, work=None):
        self._problem = problem
        self._parts = parts          # {(k, j): (re, im)} of u_{kbar j} for k <= j
        self._work = work or {}      # per-component arrays shared with the lazy fields
        self.det_h = det_h
        self.H = H

    @cached_property
    def u_kj(self) -> np.ndarray:
        n = self._problem.n
        comps = _complex_parts(self._parts)
        some = next(iter(comps.values()))
        out = np.empty(some.shape + (n, n), dtype=complex)
        for (k, j), v in comps.items():
            out[..., k, j] = v
            if j != k:
                out[..., j, k] = np.conj(v)
        return out

    @cached_property
    def g(self) -> np.ndarray:
        return self._problem.chi.components + self.u_kj

    @cached_property
    def _inv_det_g(self):
        return small_inv_det(self.g)

    @property
    def g_inv(self) -> np.ndarray:
        return self._inv_det_g[0]

    @cached_property
    def tr_h(self) -> np.ndarray:
        """n + chi^{j kbar} u_{kbar j}."""
        pb, w, p = self._problem, self._work, self._parts
        n = pb.n
        if n == 1:
            return self.det_h
        if n == 2:
            cc = pb._chi_parts()
            u01r, u01i = p[0, 1]
            # the two off-diagonal terms are complex conjugates
            return 2.0 + (cc["i00"] * p[0, 0][0] + cc["i11"] * p[1, 1][0]
                          + 2.0 * (cc["i10r"] * u01r - cc["i10i"] * u01i))
        return n + np.einsum("...jk,...kj->...", pb.chi.inverse, self.u_kj).real

    @cached_property
    def tr_h_inv(self) -> np.ndarray:
        """n - g^{j kbar} u_{kbar j}."""
        pb, w, p = self._problem, self._work, self._parts
        n = pb.n
        if n == 1:
            return 1.0 - p[0, 0][0] / w["g00"]
        if n == 2:
            u01r, u01i = p[0, 1]
            s = (w["g11"] * p[0, 0][0] + w["g00"] * p[1, 1][0]
                 - 2.0 * (w["g01r"] * u01r + w["g01i"] * u01i))
            return 2.0 - s / w["det_g"]
        return n - np.einsum("...jk,...kj->...", self.g_inv, self.u_kj).real

    @cached_property
    def min_eig_h(self) -> np.ndarray:
        """Smallest eigenvalue of h = chi^{-1} g (the generalized pair (g, chi))."""
        n = self._problem.n
        if n == 1:
            return self.det_h
        if n == 2:
            tr, det = self.tr_h, self.det_h
            return 0.5 * (tr - np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0)))
        from .chern import generalized_eigvals
        return generalized_eigvals(self.g, self._problem.chi.components)[..., 0]

    @cached_property
    def lam_min_g(self) -> np.ndarray:
        """Smallest Euclidean eigenvalue of g."""
        n, w = self._problem.n, self._work
        if n == 1:
            return w["g00"]
        if n == 2:
            a, d = w["g00"], w["g11"]
            return 0.5 * (a + d) - np.sqrt((0.5 * (a - d)) ** 2 + w["b2"])
        return hermitian_eigvals(self.g)[..., 0]


def ddbar_parts(grid: Grid, u: np.ndarray) -> dict:
    """{(k, j): (Re u_{kbar j}, Im u_{kbar j} or None on the diagonal)} for k <= j."""
    axes = grid.axes
    uh = sfft.rfftn(u, axes=axes)
    out = {}
    for (k, j), (sre, sim) in grid._ddbar_symbols.items():
        re = sfft.irfftn(uh * sre, s=grid.shape, axes=axes)
        im = None if sim is None else sfft.irfftn(uh * sim, s=grid.shape, axes=axes)
        out[k, j] = (re, im)
    return out


def _complex_parts(parts: dict) -> dict:
    return {kj: (re if im is None else re + 1j * im) for kj, (re, im) in parts.items()}


def ddbar(grid: Grid, u: np.ndarray) -> np.ndarray:
    """u_{kbar j} = d_kbar d_j u for real u, stored [k, j] (Hermitian).

    Real transforms throughout: the real and imaginary parts of each entry are
    real second derivatives of u.
    """
    n = grid.n
    out = np.empty(grid.shape + (n, n), dtype=complex)
    for (k, j), v in _complex_parts(ddbar_parts(grid, u)).items():
        out[..., k, j] = v
        if j != k:
            out[..., j, k] = np.conj(v)
    return out


def _fd_components(grid, u):
    from .calculus import grad_antiholo, grad_holo
    full = np.swapaxes(grad_holo(grid, grad_antiholo(grid, u)), -1, -2)
    n = grid.n
    return {(k, j): ((full[..., k, k].real, None) if j == k
                     else (full[..., k, j].real.copy(), full[..., k, j].imag.copy()))
            for k in range(n) for j in range(k, n)}


def _det_g(problem: FlowProblem, parts: dict):
    """det g plus the per-component work arrays, for n <= 2."""
    cc = problem._chi_parts()
    if problem.n == 1:
        g00 = cc["c00"] + parts[0, 0][0]
        return g00, {"g00": g00, "det_g": g00}
    u01r, u01i = parts[0, 1]
    g00 = cc["c00"] + parts[0, 0][0]
    g11 = cc["c11"] + parts[1, 1][0]
    g01r = cc["c01r"] + u01r
    g01i = cc["c01i"] + u01i
    b2 = g01r * g01r + g01i * g01i
    det_g = g00 * g11 - b2
    return det_g, {"g00": g00, "g11": g11, "g01r": g01r, "g01i": g01i, "b2": b2,
                   "det_g": det_g}


def assemble(problem: FlowProblem, u: np.ndarray, check: bool = True) -> Geometry:
    """Geometry of g = chi + i ddbar u; raises MetricError where g is not positive."""
    grid, chi = problem.grid, problem.chi
    n = grid.n
    parts = (ddbar_parts(grid, u) if grid.backend == "spectral"
             else _fd_components(grid, u))
    if n <= 2:
        det_g, work = _det_g(problem, parts)
        # Sylvester: g > 0 iff g_{1bar1} > 0 and det g > 0
        positive = work["g00"].min() > 0 and det_g.min() > 0
    else:
        work = {}
        geom0 = Geometry(problem, parts, None, None)
        det_g = geom0._inv_det_g[1].real
        positive = None
    det_h = det_g / chi.det
    H = problem.exp_neg_f * det_h
    geom = Geometry(problem, parts, det_h, H, work)
    if n > 2:
        geom.__dict__["_inv_det_g"] = geom0._inv_det_g
        geom.__dict__["u_kj"] = geom0.u_kj
    if check:
        if not np.all(np.isfinite(det_h)):
            raise FlowDomainError("non-finite geometry")
        if positive is None:
            positive = geom.min_eig_h.min() > 0
        if not positive:
            lam = geom.min_eig_h
            idx = np.unravel_index(np.argmin(lam), grid.shape)
            val = float(lam[idx])
            raise MetricError(f"g = chi + i ddbar u not positive: eigenvalue {val:.4g} "
                              f"at {tuple(int(i) for i in idx)}", point=idx, value=val)
    return geom


def rhs(problem: FlowProblem, geom: Geometry) -> np.ndarray:
    H = geom.H
    if not np.all(np.isfinite(H)) or H.min() <= 0:
        raise FlowDomainError("H = e^{-f} det h left (0, inf)")
    return problem.F.eval(H)


def linearized_coeff(problem: FlowProblem, geom: Geometry):
    """Prefactor F'(H) H of L, the coefficients g^{j kbar}, and the step bound kappa.

    kappa = max F'(H) H lambda_max(g^{-1}) with eigenvalues taken against the
    Euclidean coordinate metric.
    """
    pref, kappa = _pref_kappa(problem, geom)
    return pref, geom.g_inv, kappa


def _pref_kappa(problem, geom):
    pref = problem.F.d1(geom.H) * geom.H
    return pref, float(np.max(pref / geom.lam_min_g))


def apply_L(problem: FlowProblem, geom: Geometry, q: np.ndarray) -> np.ndarray:
    """L q = F' e^{-f} det h g^{j kbar} d_j d_kbar q, derivatives spectral."""
    pref = problem.F.d1(geom.H) * geom.H
    qkj = ddbar(problem.grid, q) if np.isrealobj(q) else None
    if qkj is None:
        from .calculus import grad_antiholo, grad_holo
        qkj = np.swapaxes(grad_holo(problem.grid, grad_antiholo(problem.grid, q)), -1, -2)
    return pref * np.einsum("...jk,...kj->...", geom.g_inv, qkj)


# --------------------------------------------------------------------------
# state


@dataclass(frozen=True)
class FlowState:
    t: float
    u: np.ndarray
    phi: np.ndarray
    running_inf_phi: float
    geom: Geometry
    step_index: int = 0


def normalize(grid: Grid, u: np.ndarray, chi: MetricField) -> np.ndarray:
    """phi = u - (chi^n-weighted average of u)."""
    return u - weighted_mean(grid, chi.det, u)


def initial_state(problem: FlowProblem, u0: np.ndarray) -> FlowState:
    u0 = np.asarray(u0, dtype=float)
    geom = assemble(problem, u0)
    phi = normalize(problem.grid, u0, problem.chi)
    return FlowState(0.0, u0, phi, float(phi.min()), geom, 0)


def propose_dt(problem: FlowProblem, state: FlowState, policy: StepPolicy) -> float:
    """sigma * dx_min**2 / kappa, capped by the time left to t_max."""
    _, kappa = _pref_kappa(problem, state.geom)
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    dx = min(problem.grid.spacings)
    dt = policy.safety * dx * dx / kappa
    return min(dt, policy.t_max - state.t)


def _velocity(problem, u):
    return rhs(problem, assemble(problem, u))


def advance(problem: FlowProblem, u: np.ndarray, dt: float, scheme: str = "rk2",
            k1: np.ndarray | None = None) -> np.ndarray:
    """One explicit step of size dt (negative dt allowed) without bookkeeping."""
    if k1 is None:
        k1 = _velocity(problem, u)
    if scheme == "euler":
        return u + dt * k1
    if scheme == "rk2":
        k2 = _velocity(problem, u + dt * k1)
        return u + 0.5 * dt * (k1 + k2)
    if scheme == "rk4":
        k2 = _velocity(problem, u + 0.5 * dt * k1)
        k3 = _velocity(problem, u + 0.5 * dt * k2)
        k4 = _velocity(problem, u + dt * k3)
        return u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    raise ValueError(f"unknown scheme {scheme!r}")


def step(problem: FlowProblem, state: FlowState, policy: StepPolicy,
         dt: float | None = None) -> tuple[FlowState, float]:
    """Advance one accepted step; halves dt on positivity or finiteness failure.

    Returns the new state and the dt actually used.
    """
    if dt is None:
        dt = propose_dt(problem, state, policy)
    history = []
    k1 = rhs(problem, state.geom)
    for _ in range(policy.max_retries + 1):
        history.append(dt)
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
                u_new = advance(problem, state.u, dt, policy.scheme, k1=k1)
                geom = assemble(problem, u_new)
                if not np.all(np.isfinite(u_new)):
                    raise FlowDomainError("non-finite potential")
        except (MetricError, FlowDomainError, FloatingPointError) as exc:
            log.debug("step rejected at dt=%g: %s", dt, exc)
            dt *= 0.5
            continue
        phi = u_new - problem.mean(u_new)
        inf_phi = min(state.running_inf_phi, float(phi.min()))
        new = FlowState(state.t + dt, u_new, phi, inf_phi, geom, state.step_index + 1)
        return new, dt
    raise StepFailure(f"step failed after {policy.max_retries} retries", state, history)


# --------------------------------------------------------------------------
# convergence


@dataclass(frozen=True)
class Convergence:
    r1: float
    r2: float
    c_mean: float
    c_ratio: float
    converged: bool


def converge_check(problem: FlowProblem, state: FlowState, policy: StepPolicy) -> Convergence:
    """r1 = weighted stddev(H) / mean(H); r2 = sup |F(H) - mean F(H)| (= sup |d_t phi|)."""
    H = state.geom.H
    mean_H = problem.mean(H)
    r1 = math.sqrt(max(problem.mean((H - mean_H) ** 2), 0.0)) / mean_H
    FH = problem.F.eval(H)
    r2 = float(np.abs(FH - problem.mean(FH)).max())
    c_ratio = problem.mean(state.geom.det_h) / problem.mean_exp_f
    ok = r1 < policy.tol_H_stddev and r2 < policy.tol_dtphi
    return Convergence(r1, r2, mean_H, float(c_ratio), ok)


@dataclass
class FlowReport:
    converged: bool
    final_time: float
    c_estimate: tuple[float, float]
    records: list
    termination: str
    initial: object
    final_state: FlowState
    steps: int
    identity_reports: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "converged": self.converged,
            "final_time": self.final_time,
            "c_mean": self.c_estimate[0],
            "c_ratio": self.c_estimate[1],
            "termination": self.termination,
            "steps": self.steps,
        }


def run_flow(problem: FlowProblem, u0: np.ndarray, policy: StepPolicy | None = None,
             monitor_cfg=None, snapshot_dir=None, snapshot_every: int = 0,
             on_record=None, on_state=None) -> FlowReport:
    """Step until converged or t_max, recording a MonitorRecord per accepted step.

    ``on_record(rec)`` and ``on_state(state)`` are called after every accepted step.
    """
    from . import monitors

    policy = policy or StepPolicy()
    cfg = monitor_cfg or monitors.MonitorConfig()
    state = initial_state(problem, u0)
    conv = converge_check(problem, state, policy)
    initial = monitors.record(problem, state, cfg, conv, dt=0.0)
    r1_ref = max(conv.r1, 1e-300)
    records = []
    identity_reports = []
    termination = "t_max"
    snap = Path(snapshot_dir) if snapshot_dir else None
    if snap is not None:
        snap.mkdir(parents=True, exist_ok=True)

    while state.t < policy.t_max and state.step_index < policy.max_steps:
        state, dt = step(problem, state, policy)
        conv = converge_check(problem, state, policy)
        rec = monitors.record(problem, state, cfg, conv, dt=dt)
        if cfg.identity_cadence and state.step_index % cfg.identity_cadence == 0:
            reports = monitors.identity_checks(problem, state, cfg, scheme=policy.scheme,
                                               dt=dt)
            rec.identity = {r.name: r.residual for r in reports}
            identity_reports.extend(reports)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
        if on_state is not None:
            on_state(state)
        if snap is not None and snapshot_every and state.step_index % snapshot_every == 0:
            write_snapshot(snap / f"phi_{state.step_index:07d}.bin",
                           TensorField(problem.grid, state.phi.astype(complex), "", "phi"))
        if conv.converged:
            termination = "converged"
            break
        if conv.r1 > 1e3 * r1_ref and conv.r1 > policy.tol_H_stddev:
            termination = "diverged"
            break
    else:
        if state.step_index >= policy.max_steps:
            termination = "max_steps"

    return FlowReport(conv.converged, state.t, (conv.c_mean, conv.c_ratio), records,
                      termination, initial, state, state.step_index, identity_reports)


def with_F(problem: FlowProblem, F) -> FlowProblem:
    return replace(problem, F=FFamily.parse(F))
