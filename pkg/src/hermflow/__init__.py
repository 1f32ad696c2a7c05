"""Spectral simulation of parabolic complex Monge-Ampere flows on flat complex tori.

Submodules: ``calculus`` (grids, Wirtinger derivatives, quadrature),
``chern`` (Chern connection, torsion, curvature), ``flow`` (time stepping),
``monitors`` (estimate diagnostics and evolution identities),
``ay_inequality`` (pointwise Aubin-Yau inequality), ``scenarios`` and ``cli``.
"""
__version__ = "0.1.0"
