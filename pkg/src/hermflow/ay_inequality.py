"""Pointwise evaluation of the generalized Aubin-Yau inequality for Hermitian pairs.

For two Hermitian metrics chi and omega = g the inequality reads LHS <= RHS
with (traces and inverses w.r.t. g, h = chi^{-1} g)::

    LHS = g(d Tr h, d Tr h)/Tr h
          - chi^{pq} g^{jk} g^{rs} nab_p g_{sj} nab_q g_{kr}
          - Re chi^{pq} g^{jk} nab_p g_{sj} conj(T^s_{qk})
          - Re chi^{pq} g^{jk} nab_k g_{qr} T^r_{pj}

    RHS = - 2 Re g(d Tr h, T)/Tr h - g(T, T)/Tr h + chi^{pq} g^{jk} chi_{sr} T^r_{pj} conj(T^s_{qk})
          + 2 Re g(d Tr h, alpha)/Tr h + 2 Re g(T, alpha)/Tr h
          - Re chi^{pq} g^{jk} T^r_{pj} conj(alpha_{rqk}) - g(alpha, alpha)/Tr h

where alpha_{qbar p j} = d_j (g - chi)_{qbar p} - d_p (g - chi)_{qbar j} is the
relative torsion.  When d omega = d chi all alpha terms drop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calculus import Grid, random_bandlimited, make_rng
from .chern import MetricError, MetricField, build_metric, chern_connection
from .pair import PairGeometry, gnorm

__all__ = [
    "RelativeTorsion",
    "AYPointwiseReport",
    "relative_torsion",
    "theorem3_sides",
    "corollary_sides",
    "consistency_theorem3_vs_corollary",
    "random_metric",
    "fuzz_theorem3",
    "fuzz_corollary",
    "random_potential",
    "worst",
]

REALNESS_TOL = 1e-9


@dataclass(frozen=True)
class RelativeTorsion:
    alpha: np.ndarray           # [q, p, j]
    alpha_one_form: np.ndarray  # [j]


@dataclass
class AYPointwiseReport:
    lhs: np.ndarray
    rhs: np.ndarray
    imag_ratio: float = 0.0

    @property
    def margin(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def scale(self) -> float:
        return float(max(1.0, np.abs(self.rhs).max(), np.abs(self.lhs).max()))

    @property
    def min_margin(self) -> float:
        return float(self.margin.min())

    @property
    def location(self) -> tuple[int, ...]:
        m = self.margin
        return tuple(int(i) for i in np.unravel_index(np.argmin(m), m.shape))

    def ok(self, tol: float = 1e-7) -> bool:
        return self.min_margin >= -tol * self.scale


def _real(z, parts):
    """Real part, tracking the worst |Im| / |Re| ratio of a side that must be real."""
    re = np.abs(z.real).max()
    parts.append(np.abs(z.imag).max() / max(re, 1e-300) if re > 0 else np.abs(z.imag).max())
    return z.real


def _pair(grid, chi, omega):
    if omega.grid != grid or chi.grid != grid:
        raise ValueError("metrics live on different grids")
    chern = chern_connection(grid, chi)
    return PairGeometry.from_components(grid, chi, chern, omega.components), chern


def relative_torsion(grid: Grid, chi: MetricField, omega: MetricField) -> RelativeTorsion:
    pg, _ = _pair(grid, chi, omega)
    return RelativeTorsion(pg.alpha, pg.alpha_one_form)


def _lhs_g_form(pg: PairGeometry, imag):
    inv, ginv = pg.chi.inverse, pg.g_inv
    T = pg.chern.torsion
    dtr = pg.dtr_h
    grad_term = _real(gnorm(ginv, dtr, dtr), imag) / pg.tr_h
    good = np.einsum("...pq,...jk,...rs,...psj,...qkr->...", inv, ginv, ginv,
                     pg.nab_g, pg.nab_g_bar, optimize=True)
    tor1 = np.einsum("...pq,...jk,...psj,...sqk->...", inv, ginv, pg.nab_g, np.conj(T),
                     optimize=True)
    tor2 = np.einsum("...pq,...jk,...kqr,...rpj->...", inv, ginv, pg.nab_g_bar, T,
                     optimize=True)
    return grad_term - _real(good, imag) - tor1.real - tor2.real


def _lhs_h_form(pg: PairGeometry, imag):
    """Same left side built from nabla h and traces of endomorphisms."""
    inv, ginv = pg.chi.inverse, pg.g_inv
    T = pg.chern.torsion
    hinv = pg.h_inv
    dtr = pg.dtr_h
    grad_term = _real(gnorm(ginv, dtr, dtr), imag) / pg.tr_h
    a = np.einsum("...ja,...pab->...pjb", hinv, pg.nab_h)
    b = np.einsum("...ja,...qab->...qjb", hinv, pg.nab_h_bar)
    good = np.einsum("...pq,...pjb,...qbj->...", inv, a, b, optimize=True)
    tor1 = np.einsum("...pq,...sr,...jk,...prj,...sqk->...", inv, pg.chi.components, ginv,
                     pg.nab_h, np.conj(T), optimize=True)
    tor2 = np.einsum("...jk,...kpr,...rpj->...", ginv, pg.nab_h_bar, T, optimize=True)
    return grad_term - _real(good, imag) - tor1.real - tor2.real


def _rhs(pg: PairGeometry, imag, with_alpha: bool):
    inv, ginv = pg.chi.inverse, pg.g_inv
    T, T1 = pg.chern.torsion, pg.chern.torsion_one_form
    tr = pg.tr_h
    dtr = pg.dtr_h
    out = (-2.0 * gnorm(ginv, dtr, T1).real / tr
           - _real(gnorm(ginv, T1, T1), imag) / tr
           + _real(np.einsum("...pq,...jk,...sr,...rpj,...sqk->...", inv, ginv,
                             pg.chi.components, T, np.conj(T), optimize=True), imag))
    if with_alpha:
        a, a1 = pg.alpha, pg.alpha_one_form
        out = out + (2.0 * gnorm(ginv, dtr, a1).real / tr
                     + 2.0 * gnorm(ginv, T1, a1).real / tr
                     - np.einsum("...pq,...jk,...rpj,...rqk->...", inv, ginv, T,
                                 np.conj(a), optimize=True).real
                     - _real(gnorm(ginv, a1, a1), imag) / tr)
    return out


def theorem3_sides(grid: Grid, chi: MetricField, omega: MetricField,
                   form: str = "g") -> AYPointwiseReport:
    """Both sides for an arbitrary pair; ``form="h"`` builds the left side from nabla h."""
    if omega.min_eig.min() <= 0:
        raise MetricError("omega is not positive definite")
    pg, _ = _pair(grid, chi, omega)
    imag: list[float] = []
    lhs = _lhs_h_form(pg, imag) if form == "h" else _lhs_g_form(pg, imag)
    rhs = _rhs(pg, imag, with_alpha=True)
    return AYPointwiseReport(lhs, rhs, max(imag))


def corollary_sides(grid: Grid, chi: MetricField, u: np.ndarray,
                    pair: PairGeometry | None = None) -> AYPointwiseReport:
    """Sides for omega = chi + i ddbar u, where the relative torsion vanishes."""
    if pair is None:
        chern = chern_connection(grid, chi)
        pair = PairGeometry.from_potential(grid, chi, chern, u)
    eig = build_metric(grid, pair.g, check=False).min_eig
    if eig.min() <= 0:
        raise MetricError("chi + i ddbar u is not positive definite")
    imag: list[float] = []
    lhs = _lhs_g_form(pair, imag)
    rhs = _rhs(pair, imag, with_alpha=False)
    return AYPointwiseReport(lhs, rhs, max(imag))


def consistency_theorem3_vs_corollary(grid: Grid, chi: MetricField, u: np.ndarray) -> float:
    """Max discrepancy, relative to scale, between the general-pair evaluation
    (nabla h form, alpha terms kept) at omega = chi + i ddbar u and the corollary."""
    chern = chern_connection(grid, chi)
    pair = PairGeometry.from_potential(grid, chi, chern, u)
    omega = build_metric(grid, pair.g)
    t3 = theorem3_sides(grid, chi, omega, form="h")
    co = corollary_sides(grid, chi, u, pair=pair)
    scale = max(t3.scale, co.scale)
    return float(max(np.abs(t3.lhs - co.lhs).max(), np.abs(t3.rhs - co.rhs).max()) / scale)


# --------------------------------------------------------------------------
# fuzzing


def random_metric(grid: Grid, max_mode: int, amplitude: float, seed,
                  base=None, min_eig: float = 0.5) -> MetricField:
    """base + band-limited Hermitian perturbation, amplitude shrunk until min_eig holds."""
    base = np.eye(grid.n) if base is None else np.asarray(base)
    pert = random_bandlimited(grid, max_mode, 1.0, seed, "hermitian-matrix")
    a = amplitude
    for _ in range(60):
        m = build_metric(grid, base + a * pert, check=False)
        if m.min_eig.min() >= min_eig:
            return m
        a *= 0.7
    raise MetricError("could not produce a metric with the requested min eigenvalue")


@dataclass(frozen=True)
class FuzzRow:
    seed: int
    n: int
    max_mode: int
    amplitude: float
    min_margin: float
    scale: float
    location: tuple
    imag_ratio: float

    @property
    def relative_margin(self) -> float:
        return self.min_margin / self.scale

    def line(self) -> str:
        return (f"seed={self.seed} n={self.n} M={self.max_mode} amplitude={self.amplitude:g} "
                f"min_margin={self.min_margin:.6e} scale={self.scale:.6e} "
                f"location={self.location}")


def fuzz_theorem3(seeds, n: int = 2, size: int = 8, max_mode: int = 2,
                  amplitude: float = 0.15):
    rows = []
    grid = Grid.uniform(n, size)
    for s in seeds:
        ss = np.random.SeedSequence(int(s)).spawn(2)
        chi = random_metric(grid, max_mode, amplitude, make_rng(ss[0]))
        omega = random_metric(grid, max_mode, amplitude, make_rng(ss[1]))
        rep = theorem3_sides(grid, chi, omega)
        rows.append(FuzzRow(int(s), n, max_mode, amplitude, rep.min_margin, rep.scale,
                            rep.location, rep.imag_ratio))
    return rows


def random_potential(grid: Grid, chi: MetricField, max_mode: int, amplitude: float,
                     seed, min_eig_h: float = 0.25) -> np.ndarray:
    """Band-limited real potential shrunk until h = chi^{-1}(chi + i ddbar u) >= min_eig_h."""
    from .flow import ddbar
    from .chern import generalized_eigvals
    u = random_bandlimited(grid, max_mode, 1.0, seed, "real")
    g1 = ddbar(grid, u)
    a = amplitude
    for _ in range(60):
        lam = generalized_eigvals(chi.components + a * g1, chi.components)[..., 0]
        if lam.min() >= min_eig_h:
            return a * u
        a *= 0.7
    raise MetricError("could not scale potential to a positive h")


def fuzz_corollary(seeds, n: int = 2, size: int = 8, max_mode: int = 2,
                   amplitude: float = 0.15, u_amplitude: float = 0.05):
    rows = []
    grid = Grid.uniform(n, size)
    for s in seeds:
        ss = np.random.SeedSequence(int(s) + 10_000).spawn(2)
        chi = random_metric(grid, max_mode, amplitude, make_rng(ss[0]))
        u = random_potential(grid, chi, max_mode, u_amplitude, make_rng(ss[1]))
        rep = corollary_sides(grid, chi, u)
        rows.append(FuzzRow(int(s), n, max_mode, amplitude, rep.min_margin, rep.scale,
                            rep.location, rep.imag_ratio))
    return rows


def worst(rows) -> float:
    return min((r.relative_margin for r in rows), default=math.inf)
