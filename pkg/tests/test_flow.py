import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hermflow.calculus import Grid, random_bandlimited, weighted_mean
from hermflow.chern import MetricError, build_metric
from hermflow.ay_inequality import random_metric, random_potential
from hermflow.flow import (FFamily, FlowDomainError, FlowProblem, StepFailure, StepPolicy,
                           advance, apply_L, assemble, converge_check, ddbar, initial_state,
                           linearized_coeff, normalize, propose_dt, rhs, run_flow, step, with_F)


def flat_problem(n=1, size=16, f=0.0, F="log"):
    g = Grid.uniform(n, size)
    return FlowProblem(g, build_metric(g, np.eye(n)), np.zeros(g.shape) + f, FFamily.parse(F))


def random_problem(seed=1, size=8, F="log", a=0.3):
    g = Grid.uniform(2, size)
    chi = random_metric(g, 1, a, seed)
    f = random_bandlimited(g, 1, 0.3, seed + 1)
    return FlowProblem(g, chi, f, FFamily.parse(F))


# --------------------------------------------------------------------------
# F family


FAMILIES = ["log", "exp", "neg-inverse", "power(0.5)", "power(1)", "power(2)", "power(3.5)"]


@pytest.mark.parametrize("spec", FAMILIES)
def test_derivatives_match_finite_differences(spec):
    F = FFamily.parse(spec)
    s = np.geomspace(0.1, 10, 41)
    h = 1e-5 * s
    d1 = (F.eval(s + h) - F.eval(s - h)) / (2 * h)
    d2 = (F.d1(s + h) - F.d1(s - h)) / (2 * h)
    assert np.allclose(F.d1(s), d1, rtol=1e-7)
    assert np.allclose(F.d2(s), d2, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("spec", FAMILIES)
def test_strictly_increasing(spec):
    F = FFamily.parse(spec)
    s = np.geomspace(1e-3, 1e2, 2001)
    assert np.all(F.d1(s) > 0)
    assert np.all(np.diff(F.eval(s)) > 0)


def test_power_family_tends_to_log():
    s = np.geomspace(0.1, 10, 11)
    assert np.allclose(FFamily("power", 1e-9).eval(s), np.log(s), atol=1e-8)


def test_power_one_is_affine():
    assert FFamily.parse("power(1)").eval(2.0) == pytest.approx(1.0)


def test_parse_and_label_roundtrip():
    for spec in FAMILIES:
        F = FFamily.parse(spec)
        assert FFamily.parse(F.label) == F
    assert FFamily.parse({"kind": "power", "alpha": 2}).label == "power(2)"
    with pytest.raises(ValueError):
        FFamily.parse("cosh")
    with pytest.raises(ValueError):
        FFamily("power", -1.0)


def test_max_abs_on_interval():
    F = FFamily.parse("log")
    assert F.max_abs_on(0.5, 3.0) == pytest.approx(math.log(3.0))
    assert F.max_abs_on(0.1, 2.0) == pytest.approx(-math.log(0.1))


def test_step_policy_validation():
    with pytest.raises(ValueError):
        StepPolicy(scheme="leapfrog")
    with pytest.raises(ValueError):
        StepPolicy(safety=1.5)
    with pytest.raises(ValueError):
        StepPolicy(tol_H_stddev=0)


# --------------------------------------------------------------------------
# assembly


def test_zero_potential_geometry():
    p = flat_problem(n=2, size=8, f=0.2)
    geom = assemble(p, np.zeros(p.grid.shape))
    assert np.allclose(geom.det_h, 1) and np.allclose(geom.tr_h, 2)
    assert np.allclose(geom.tr_h_inv, 2) and np.allclose(geom.min_eig_h, 1)
    assert np.allclose(geom.H, math.exp(-0.2))


def test_flat_sine_potential_matches_symbolic_oracle(frozen):
    ref = frozen["flat_sin_potential"]
    p = flat_problem(n=1, size=frozen["grid_size"])
    x = p.grid.coords()[0]
    u = ref["amplitude"] * np.sin(2 * np.pi * x) + np.zeros(p.grid.shape)
    geom = assemble(p, u)
    pts = [tuple(q) for q in frozen["points_2d"]]
    assert np.allclose([geom.u_kj[q][0, 0].real for q in pts], ref["u_11"], atol=1e-13)
    assert np.allclose([geom.det_h[q] for q in pts], ref["det_h"], atol=1e-13)


@pytest.mark.parametrize("n,size", [(1, 16), (2, 8), (3, 8)])
def test_traces_match_per_point_matrix_oracle(n, size):
    g = Grid.uniform(n, size)
    chi = random_metric(g, 1, 0.3, 3)
    f = random_bandlimited(g, 1, 0.3, 4)
    u = random_potential(g, chi, 2, 0.1, 5)
    p = FlowProblem(g, chi, f, FFamily())
    geom = assemble(p, u)
    gg = chi.components + ddbar(g, u)
    h = np.linalg.solve(chi.components, gg)
    assert np.abs(geom.tr_h - np.trace(h, axis1=-2, axis2=-1).real).max() < 1e-11
    hinv = np.linalg.inv(h)
    assert np.abs(geom.tr_h_inv - np.trace(hinv, axis1=-2, axis2=-1).real).max() < 1e-11
    assert np.abs(geom.det_h - np.linalg.det(h).real).max() < 1e-11
    assert np.abs(geom.g_inv - np.linalg.inv(gg)).max() < 1e-11
    lam = np.sort(np.linalg.eigvals(h).real, axis=-1)[..., 0]
    assert np.abs(geom.min_eig_h - lam).max() < 1e-10
    # Tr h = n + chi^{j kbar} u_{kbar j}, Tr h^-1 = n - g^{j kbar} u_{kbar j}
    uk = ddbar(g, u)
    assert np.allclose(geom.tr_h, n + np.einsum("...jk,...kj->...", chi.inverse, uk).real,
                       atol=1e-12)
    assert np.allclose(geom.tr_h_inv, n - np.einsum("...jk,...kj->...", geom.g_inv, uk).real,
                       atol=1e-12)


def test_assemble_rejects_non_positive_potential():
    p = flat_problem(n=1, size=16)
    x = p.grid.coords()[0]
    u = 0.5 * np.sin(2 * np.pi * x) + np.zeros(p.grid.shape)   # 1 - 0.5 pi^2 < 0 at x = 1/4
    with pytest.raises(MetricError) as info:
        assemble(p, u)
    assert info.value.point[0] == 4


def test_ddbar_is_hermitian_and_matches_composition():
    p = random_problem()
    u = random_bandlimited(p.grid, 2, 1.0, 9)
    from hermflow.calculus import grad_antiholo, grad_holo
    ref = np.swapaxes(grad_holo(p.grid, grad_antiholo(p.grid, u)), -1, -2)
    got = ddbar(p.grid, u)
    assert np.abs(got - ref).max() < 1e-12 * np.abs(ref).max()
    assert np.abs(got - np.conj(np.swapaxes(got, -1, -2))).max() == 0


# --------------------------------------------------------------------------
# rhs and the linearized operator


def test_rhs_vanishes_at_trivial_state():
    p = flat_problem()
    assert np.abs(rhs(p, assemble(p, np.zeros(p.grid.shape)))).max() == 0


def test_rhs_of_constant_H():
    p = flat_problem(f=-math.log(2.0), F="power(1)")
    assert np.allclose(rhs(p, assemble(p, np.zeros(p.grid.shape))), 1.0)


def test_rhs_interval_bound():
    p = random_problem(F="exp")
    geom = assemble(p, random_potential(p.grid, p.chi, 2, 0.1, 2))
    bound = p.F.max_abs_on(geom.H.min(), geom.H.max())
    assert np.abs(rhs(p, geom)).max() <= bound


def test_rhs_domain_error():
    p = flat_problem()
    x = p.grid.coords()[0]
    geom = assemble(p, 0.5 * np.sin(2 * np.pi * x) + np.zeros(p.grid.shape), check=False)
    with pytest.raises(FlowDomainError):
        rhs(p, geom)


def test_linearized_coefficients_trivial():
    p = flat_problem(n=2, size=8)
    pref, ginv, kappa = linearized_coeff(p, assemble(p, np.zeros(p.grid.shape)))
    assert np.allclose(pref, 1) and kappa == pytest.approx(1)
    assert np.allclose(ginv, np.eye(2))


def test_linearized_prefactor_for_exp():
    p = flat_problem(f=-math.log(2.0), F="exp")
    pref, _, _ = linearized_coeff(p, assemble(p, np.zeros(p.grid.shape)))
    assert np.allclose(pref, 2 * math.e**2)


def test_kappa_matches_dense_eigen_sweep():
    p = random_problem(F="power(2)")
    u = random_potential(p.grid, p.chi, 2, 0.1, 6)
    geom = assemble(p, u)
    _, _, kappa = linearized_coeff(p, geom)
    gg = p.chi.components + ddbar(p.grid, u)
    lam_max_inv = 1.0 / np.linalg.eigvalsh(gg)[..., 0]
    ref = np.max(p.F.d1(geom.H) * geom.H * lam_max_inv)
    assert kappa == pytest.approx(ref, rel=1e-12)


def test_L_is_laplacian_at_trivial_state():
    p = flat_problem()
    x = p.grid.coords()[0]
    q = np.sin(2 * np.pi * x) + np.zeros(p.grid.shape)
    Lq = apply_L(p, assemble(p, np.zeros(p.grid.shape)), q)
    assert np.abs(Lq + np.pi**2 * q).max() < 1e-12


# --------------------------------------------------------------------------
# stepping


def test_propose_dt_formula():
    p = flat_problem(size=16)
    st0 = initial_state(p, np.zeros(p.grid.shape))
    assert propose_dt(p, st0, StepPolicy(safety=0.25)) == pytest.approx(0.25 / 256)
    assert propose_dt(p, st0, StepPolicy(t_max=1e-4)) == pytest.approx(1e-4)
    coarse = flat_problem(size=8)
    ratio = propose_dt(coarse, initial_state(coarse, np.zeros(coarse.grid.shape)), StepPolicy())
    assert ratio == pytest.approx(4 * 0.25 / 256)


@pytest.mark.parametrize("scheme", ["euler", "rk2", "rk4"])
@pytest.mark.parametrize("F", ["exp", "neg-inverse"])
def test_spatially_constant_dynamics_are_exact(scheme, F):
    p = flat_problem(F=F)
    pol = StepPolicy(scheme=scheme, t_max=0.05)
    s = initial_state(p, np.zeros(p.grid.shape))
    for _ in range(5):
        s, _ = step(p, s, pol)
    assert np.allclose(s.u, s.t * p.F.eval(1.0), rtol=1e-14, atol=0)
    assert np.abs(s.phi).max() < 1e-15


def test_rk2_local_error_order():
    p = random_problem(F="log")
    u = random_potential(p.grid, p.chi, 1, 0.05, 8)
    errs = []
    for dt in (4e-4, 2e-4, 1e-4):
        ref = u
        for _ in range(16):
            ref = advance(p, ref, dt / 16, "rk4")
        errs.append(np.abs(advance(p, u, dt, "rk2") - ref).max())
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    # local error is O(dt^3), i.e. a second-order method
    assert min(orders) >= 2.8


def test_advance_rejects_unknown_scheme():
    p = flat_problem()
    with pytest.raises(ValueError):
        advance(p, np.zeros(p.grid.shape), 1e-3, "midpoint")


def _near_degenerate(p, min_eig=1e-3):
    x = p.grid.coords()[0]
    return (1 - min_eig) / np.pi**2 * np.sin(2 * np.pi * x) + np.zeros(p.grid.shape)


def test_retry_path_keeps_positivity():
    p = flat_problem(size=16)
    u = _near_degenerate(p)
    s = initial_state(p, u)
    assert s.geom.min_eig_h.min() == pytest.approx(1e-3, rel=1e-9)
    new, used = step(p, s, StepPolicy(max_retries=30), dt=0.5)
    assert used < 0.5
    assert new.geom.min_eig_h.min() > 0


def test_step_failure_reports_history():
    p = flat_problem(size=16)
    s = initial_state(p, _near_degenerate(p))
    with pytest.raises(StepFailure) as info:
        step(p, s, StepPolicy(max_retries=2), dt=0.5)
    assert list(info.value.dt_history) == [0.5, 0.25, 0.125]
    assert info.value.state is s


# --------------------------------------------------------------------------
# normalization and convergence


def test_normalize_examples():
    p = random_problem()
    assert np.abs(normalize(p.grid, np.full(p.grid.shape, 3.0), p.chi)).max() < 1e-14
    u = random_bandlimited(p.grid, 2, 1.0, 3)
    phi = normalize(p.grid, u, p.chi)
    assert np.abs(normalize(p.grid, phi, p.chi) - phi).max() < 1e-15


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_normalize_is_mean_free_projection(seed):
    p = random_problem(seed=seed % 1000)
    u = random_bandlimited(p.grid, 2, 1.0, seed)
    phi = normalize(p.grid, u, p.chi)
    assert abs(weighted_mean(p.grid, p.chi.det, phi)) <= 1e-12 * np.abs(phi).max()
    assert abs(p.mean(phi)) <= 1e-12 * np.abs(phi).max()
    assert np.abs(normalize(p.grid, phi, p.chi) - phi).max() <= 1e-14


def test_converge_check_trivial():
    p = flat_problem()
    c = converge_check(p, initial_state(p, np.zeros(p.grid.shape)), StepPolicy())
    assert c.r1 == 0 and c.r2 == 0 and c.c_mean == 1 and c.c_ratio == 1 and c.converged


def test_c_estimates_agree_for_constant_H():
    p = flat_problem(f=0.7)
    c = converge_check(p, initial_state(p, np.zeros(p.grid.shape)), StepPolicy())
    assert c.c_ratio == pytest.approx(c.c_mean, rel=1e-12)


def test_trivial_run_converges_immediately():
    p = flat_problem()
    rep = run_flow(p, np.zeros(p.grid.shape))
    assert rep.converged and rep.steps == 1 and rep.termination == "converged"
    assert rep.c_estimate == (1.0, 1.0)
    assert np.abs(rep.final_state.phi).max() == 0


def test_small_data_run_solves_elliptic_equation():
    g = Grid.uniform(1, 16)
    x = g.coords()[0]
    f = 0.1 * np.sin(2 * np.pi * x) + np.zeros(g.shape)
    p = FlowProblem(g, build_metric(g, np.eye(1)), f, FFamily())
    rep = run_flow(p, np.zeros(g.shape))
    assert rep.converged
    c = rep.c_estimate[0]
    dh = rep.final_state.geom.det_h
    assert np.abs(dh - c * np.exp(f)).max() / c < 1e-4
    assert rep.c_estimate[1] == pytest.approx(c, rel=1e-5)


def test_state_invariants_along_run():
    p = random_problem(F="power(2)")
    u0 = random_potential(p.grid, p.chi, 2, 0.2, 4)
    seen = []

    def check(state):
        phi = state.phi
        seen.append(state.step_index)
        assert abs(p.mean(phi)) <= 1e-10 * np.abs(phi).max()
        assert state.running_inf_phi <= phi.min()
        assert state.geom.min_eig_h.min() > 0

    run_flow(p, u0, StepPolicy(t_max=0.05), on_state=check)
    assert seen and seen == list(range(1, len(seen) + 1))


def test_schemes_reach_the_same_limit():
    g = Grid.uniform(1, 16)
    x = g.coords()[0]
    f = 0.3 * np.sin(2 * np.pi * x) + np.zeros(g.shape)
    p = FlowProblem(g, build_metric(g, np.eye(1)), f, FFamily())
    u0 = random_potential(g, p.chi, 2, 0.5, 3)
    phis = {}
    for scheme in ("euler", "rk2", "rk4"):
        rep = run_flow(p, u0, StepPolicy(scheme=scheme))
        assert rep.converged
        phis[scheme] = rep.final_state.phi
    assert np.abs(phis["euler"] - phis["rk2"]).max() < 1e-5
    assert np.abs(phis["rk4"] - phis["rk2"]).max() < 1e-5


def test_with_F_swaps_nonlinearity():
    p = flat_problem()
    assert with_F(p, "exp").F.kind == "exp" and p.F.kind == "log"
