"""Exact first-order geometry of a second Hermitian form g against a background chi.

Every derivative here comes from spectral derivatives of chi and g themselves
(band-limited inputs, hence exact) combined by the product rule, never from
differentiating a nonlinear expression on the grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .calculus import Grid, grad_antiholo, grad_holo
from .chern import ChernData, MetricField, covariant_deriv, small_inv_det


def gnorm(ginv, a, b):
    """g^{j kbar} a_j conj(b_k)."""
    return np.einsum("...jk,...j,...k->...", ginv, a, np.conj(b))


@dataclass
class PairGeometry:
    """Derived quantities of (chi, g) at one instant.

    ``dg[p, k, j]`` is d_p g_{kbar j} and ``dg_bar[q, k, j]`` is d_qbar g_{kbar j}.
    """

    grid: Grid
    chi: MetricField
    chern: ChernData
    g: np.ndarray
    dg: np.ndarray
    dg_bar: np.ndarray

    @classmethod
    def from_components(cls, grid, chi, chern, g):
        return cls(grid, chi, chern, g, grad_holo(grid, g), grad_antiholo(grid, g))

    @classmethod
    def from_potential(cls, grid, chi, chern, u):
        """g = chi + u_{kbar j}; third derivatives of u taken spectrally."""
        from .flow import ddbar
        u_kj = ddbar(grid, u)
        return cls(grid, chi, chern, chi.components + u_kj,
                   chern.dchi + grad_holo(grid, u_kj),
                   chern.dchi_bar + grad_antiholo(grid, u_kj))

    @cached_property
    def _inv_det(self):
        return small_inv_det(self.g)

    @property
    def g_inv(self):
        return self._inv_det[0]

    @property
    def det_h(self):
        return self._inv_det[1].real / self.chi.det

    @cached_property
    def u(self):
        """u_{kbar j} = g - chi."""
        return self.g - self.chi.components

    @cached_property
    def h(self):
        """h^p_q = chi^{p rbar} g_{rbar q}."""
        return np.einsum("...pr,...rq->...pq", self.chi.inverse, self.g)

    @cached_property
    def h_inv(self):
        return small_inv_det(self.h)[0]

    @cached_property
    def tr_h(self):
        return np.einsum("...jk,...kj->...", self.chi.inverse, self.g).real

    @cached_property
    def dinv_chi(self):
        """d_p chi^{j kbar} as [p, j, k]."""
        inv = self.chi.inverse
        return -np.einsum("...ja,...pab,...bk->...pjk", inv, self.chern.dchi, inv)

    @cached_property
    def dtr_h(self):
        """d_p Tr h by the product rule; d_pbar Tr h is its conjugate."""
        return (np.einsum("...pjk,...kj->...p", self.dinv_chi, self.g)
                + np.einsum("...jk,...pkj->...p", self.chi.inverse, self.dg))

    @cached_property
    def dlog_det_h(self):
        """d_p log det h = g^{j kbar} d_p g_{kbar j} - chi^{j kbar} d_p chi_{kbar j}."""
        return (np.einsum("...jk,...pkj->...p", self.g_inv, self.dg)
                - np.einsum("...jk,...pkj->...p", self.chi.inverse, self.chern.dchi))

    @cached_property
    def nab_g(self):
        """nabla_p g_{sbar j} as [p, s, j]."""
        return covariant_deriv(self.grid, self.g, "bl", "holo", self.chern, partial=self.dg)

    @cached_property
    def nab_g_bar(self):
        """nabla_qbar g_{kbar r} as [q, k, r]."""
        return covariant_deriv(self.grid, self.g, "bl", "antiholo", self.chern,
                               partial=self.dg_bar)

    @cached_property
    def dh(self):
        """d_p h^a_b as [p, a, b]."""
        return (np.einsum("...par,...rb->...pab", self.dinv_chi, self.g)
                + np.einsum("...ar,...prb->...pab", self.chi.inverse, self.dg))

    @cached_property
    def dh_bar(self):
        dinv_bar = np.conj(np.swapaxes(self.dinv_chi, -1, -2))
        return (np.einsum("...par,...rb->...pab", dinv_bar, self.g)
                + np.einsum("...ar,...prb->...pab", self.chi.inverse, self.dg_bar))

    @cached_property
    def nab_h(self):
        """nabla_p h^a_b as [p, a, b], from the endomorphism directly."""
        return covariant_deriv(self.grid, self.h, "ul", "holo", self.chern, partial=self.dh)

    @cached_property
    def nab_h_bar(self):
        return covariant_deriv(self.grid, self.h, "ul", "antiholo", self.chern,
                               partial=self.dh_bar)

    @cached_property
    def alpha(self):
        """alpha_{qbar p j} = d_j u_{qbar p} - d_p u_{qbar j} as [q, p, j]."""
        du = self.dg - self.chern.dchi          # [p, q, j] = d_p u_{qbar j}
        return np.einsum("...jqp->...qpj", du) - np.einsum("...pqj->...qpj", du)

    @cached_property
    def alpha_one_form(self):
        return np.einsum("...pq,...qpj->...j", self.chi.inverse, self.alpha)
