import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hermflow.calculus import (Grid, TensorField, deriv_antiholo, deriv_holo,
                               evaluate_series, fourier_coefficients, grad_antiholo,
                               grad_holo, integrate, make_rng, random_bandlimited,
                               read_snapshot, weighted_mean, write_snapshot)

G1 = Grid.uniform(1, 16)
G2 = Grid.uniform(2, 8)


def _at(field, points):
    return np.array([field[tuple(p)] for p in points])


# --------------------------------------------------------------------------
# grid


def test_grid_rejects_bad_sizes():
    with pytest.raises(ValueError):
        Grid(1, (16,))
    with pytest.raises(ValueError):
        Grid(1, (12, 16))
    with pytest.raises(ValueError):
        Grid(1, (4, 4))
    with pytest.raises(ValueError):
        Grid(4, (8,) * 8)


def test_grid_geometry():
    g = Grid(2, (8, 16, 8, 32))
    assert g.shape == (8, 16, 8, 32)
    assert g.spacings == (1 / 8, 1 / 16, 1 / 8, 1 / 32)
    assert g.npoints == 8 * 16 * 8 * 32
    assert math.isclose(g.cell_volume * g.npoints, 1.0)


def test_axis_out_of_range():
    with pytest.raises(IndexError):
        deriv_holo(G1, G1.zeros(), 1)
    with pytest.raises(IndexError):
        deriv_antiholo(G2, G2.zeros(), -1)


# --------------------------------------------------------------------------
# derivatives


def test_holo_derivative_of_sine():
    x = G1.coords()[0]
    f = np.sin(2 * np.pi * x) + G1.zeros()
    expect = np.pi * np.cos(2 * np.pi * x) + G1.zeros()
    assert np.abs(deriv_holo(G1, f, 0) - expect).max() < 1e-13


def test_derivatives_of_constant_vanish():
    c = G2.zeros() + (2.5 - 1j)
    for j in range(2):
        assert np.abs(deriv_holo(G2, c, j)).max() < 1e-14
        assert np.abs(deriv_antiholo(G2, c, j)).max() < 1e-14


def test_plane_wave_matches_symbolic_oracle(frozen):
    g = Grid.uniform(1, frozen["grid_size"])
    x, y = g.coords()
    f = np.exp(2j * np.pi * (x + y)) + g.zeros()
    pts = frozen["points_2d"]
    want = np.array([complex(*v) for v in frozen["dz_plane_wave"]])
    assert np.abs(_at(deriv_holo(g, f, 0), pts) - want).max() < 1e-12
    want = np.array([complex(*v) for v in frozen["dzbar_plane_wave"]])
    assert np.abs(_at(deriv_antiholo(g, f, 0), pts) - want).max() < 1e-12


def test_conjugation_symmetry():
    f = random_bandlimited(G2, 2, 1.0, 11, "complex")
    for j in range(2):
        err = np.abs(deriv_antiholo(G2, np.conj(f), j) - np.conj(deriv_holo(G2, f, j))).max()
        assert err < 1e-13


def test_antiholo_derivative_ignores_other_coordinates():
    # Re z^2 is not an argument of z^1
    x = G2.coords()[2]
    f = np.sin(2 * np.pi * x) + G2.zeros()
    assert np.abs(deriv_antiholo(G2, f, 0)).max() < 1e-14
    assert np.abs(deriv_holo(G2, f, 0)).max() < 1e-14


def test_antiholo_derivative_of_imaginary_axis_sine():
    # for n = 1, x^2 = Im z^1: d/dzbar sin(2 pi y) = (i/2) 2 pi cos(2 pi y)
    y = G1.coords()[1]
    f = np.sin(2 * np.pi * y) + G1.zeros()
    expect = 1j * np.pi * np.cos(2 * np.pi * y) + G1.zeros()
    assert np.abs(deriv_antiholo(G1, f, 0) - expect).max() < 1e-13


def test_gradient_stacks_directions_first():
    f = random_bandlimited(G2, 2, 1.0, 3, "hermitian-matrix")
    g = grad_holo(G2, f)
    assert g.shape == G2.shape + (2, 2, 2)
    assert np.allclose(g[..., 1, :, :], deriv_holo(G2, f, 1), atol=1e-14)
    gb = grad_antiholo(G2, f)
    assert np.allclose(gb[..., 0, :, :], deriv_antiholo(G2, f, 0), atol=1e-14)


def test_fd4_backend_converges_at_fourth_order():
    errs = []
    for size in (16, 32, 64):
        g = Grid(1, (size, size), backend="fd4")
        x, y = g.coords()
        f = np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y) + g.zeros()
        exact = np.pi * (np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)
                         + 1j * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y))
        errs.append(np.abs(deriv_holo(g, f, 0) - exact).max())
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) > 3.8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), j=st.integers(0, 1), k=st.integers(0, 1))
def test_mixed_partials_commute(seed, j, k):
    f = random_bandlimited(G2, 2, 1.0, seed, "complex")
    a = deriv_holo(G2, deriv_antiholo(G2, f, k), j)
    b = deriv_antiholo(G2, deriv_holo(G2, f, j), k)
    assert np.abs(a - b).max() <= 1e-11 * max(np.abs(a).max(), 1e-300)


# --------------------------------------------------------------------------
# quadrature


def test_unit_volume():
    assert abs(integrate(G2, 1.0, 1.0) - 1.0) < 1e-14


def test_mean_zero_mode_integrates_to_zero():
    x = G1.coords()[0]
    assert abs(integrate(G1, 1.0, np.sin(2 * np.pi * x) + G1.zeros())) < 1e-15


def test_nonpositive_weight_rejected():
    with pytest.raises(ValueError):
        integrate(G1, G1.zeros(dtype=float), 1.0)


def test_exponential_of_sine_matches_bessel_value(frozen):
    # spectrally accurate trapezoid rule on an analytic periodic integrand
    g = Grid.uniform(1, 64)
    x = g.coords()[0]
    val = integrate(g, 1.0, np.exp(0.3 * np.sin(2 * np.pi * x)) + g.zeros(dtype=float))
    assert abs(val.real - frozen["mean_exp_sin_0p3"]) < 1e-14


def test_weighted_integral_matches_refined_grid():
    coarse, fine = Grid.uniform(2, 8), Grid.uniform(2, 32)
    w = random_bandlimited(coarse, 1, 0.3, 21, "real")
    f = random_bandlimited(coarse, 1, 1.0, 22, "real")
    a = integrate(coarse, 1.0 + w, f).real
    b = integrate(fine, 1.0 + _resample(coarse, w, fine), _resample(coarse, f, fine)).real
    assert abs(a - b) <= 1e-12 * abs(b)


def _resample(src, field, dst):
    """Evaluate a band-limited field at every point of a finer grid."""
    coef = fourier_coefficients(src, field)
    pts = np.stack([c.ravel() for c in np.meshgrid(*[np.arange(s) / s for s in dst.sizes],
                                                     indexing="ij")], axis=1)
    return evaluate_series(src, coef, pts, 1).real.reshape(dst.shape)


def test_weighted_mean_of_constant():
    w = 1.0 + random_bandlimited(G2, 1, 0.5, 4, "real")
    assert abs(weighted_mean(G2, w, 3.0) - 3.0) < 1e-14


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_integration_by_parts(seed):
    rng = make_rng(seed)
    f = random_bandlimited(G2, 2, 1.0, rng, "complex")
    g = random_bandlimited(G2, 2, 1.0, rng, "complex")
    for j in range(2):
        lhs = integrate(G2, 1.0, deriv_holo(G2, f, j) * g)
        rhs = -integrate(G2, 1.0, f * deriv_holo(G2, g, j))
        scale = integrate(G2, 1.0, np.abs(deriv_holo(G2, f, j) * g)).real
        assert abs(lhs - rhs) <= 1e-11 * scale


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_parseval(seed):
    f = random_bandlimited(G2, 2, 1.0, seed, "complex")
    c = fourier_coefficients(G2, f)
    p = integrate(G2, 1.0, np.abs(f) ** 2).real
    assert abs(p - np.sum(np.abs(c) ** 2)) <= 1e-12 * p


# --------------------------------------------------------------------------
# random fields


def test_zero_amplitude_gives_zero_field():
    assert not random_bandlimited(G2, 2, 0.0, 1).any()


def test_same_seed_same_field():
    a = random_bandlimited(G2, 2, 1.0, 99, "hermitian-matrix")
    b = random_bandlimited(G2, 2, 1.0, 99, "hermitian-matrix")
    assert np.array_equal(a, b)


def test_real_symmetry_is_real():
    f = random_bandlimited(G1, 4, 1.0, 5, "real")
    assert not np.iscomplexobj(f)
    c = random_bandlimited(G1, 4, 1.0, 5, "complex")
    # the real field is the real part of the same seeded series, rescaled
    assert np.abs(np.imag(f)).max() < 1e-13
    assert np.abs(c).max() > 0


def test_hermitian_matrix_symmetry():
    m = random_bandlimited(G2, 2, 0.7, 8, "hermitian-matrix")
    assert np.abs(m - np.conj(np.swapaxes(m, -1, -2))).max() == 0
    assert math.isclose(np.abs(m).max(), 0.7)


def test_band_limit_enforced():
    with pytest.raises(ValueError):
        random_bandlimited(G2, 3, 1.0, 0)


def test_series_evaluation_matches_grid_values():
    f = random_bandlimited(G2, 2, 1.0, 17, "complex")
    coef = fourier_coefficients(G2, f)
    idx = np.array([[1, 2, 3, 4], [7, 0, 5, 6]])
    pts = idx / 8.0
    got = evaluate_series(G2, coef, pts, 2)[:, 0]
    assert np.abs(got - np.array([f[tuple(i)] for i in idx])).max() < 1e-13


# --------------------------------------------------------------------------
# snapshots


def test_snapshot_roundtrip(tmp_path):
    v = random_bandlimited(G2, 2, 1.0, 2, "hermitian-matrix")
    tf = TensorField(G2, v, "bl", "chi", hermitian=(0, 1))
    p = tmp_path / "chi.bin"
    write_snapshot(p, tf)
    back = read_snapshot(p)
    assert back.signature == "bl" and back.name == "chi"
    assert np.array_equal(back.values, v)


def test_snapshot_layout(tmp_path):
    g = Grid.uniform(1, 8)
    v = np.arange(64, dtype=float).reshape(8, 8) + 0.5j
    p = tmp_path / "f.bin"
    write_snapshot(p, TensorField(g, v))
    raw = p.read_bytes()
    nl = raw.index(b"\n")
    assert b'"dtype": "f64-le"' in raw[:nl]
    assert len(raw) - nl - 1 == 64 * 16
    # row-major, interleaved (re, im), little-endian
    re, im = struct.unpack("<dd", raw[nl + 1 + 16 * 9: nl + 1 + 16 * 10])
    assert (re, im) == (9.0, 0.5)


def test_tensor_field_checks():
    with pytest.raises(ValueError):
        TensorField(G1, G1.zeros(1, 1), "l")   # wrong rank
    with pytest.raises(ValueError):
        TensorField(G1, G1.zeros(1), "x")
    bad = G2.zeros(2, 2)
    bad[..., 0, 1] = 1.0
    with pytest.raises(ValueError):
        TensorField(G2, bad, "bl", hermitian=(0, 1))
