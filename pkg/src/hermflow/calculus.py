"""Periodic grids on the flat torus C^n / (Z^n + iZ^n) and spectral calculus.

Real axis ``2j`` carries Re z^j and axis ``2j + 1`` carries Im z^j (0-based),
so z^j = x^{2j} + i x^{2j+1}.  Fields are plain numpy arrays of shape
``grid.shape + component_shape``; tensor component indices always trail the
grid axes.

Wirtinger derivatives::

    d/dz^j    = 1/2 (d/dx^{2j} - i d/dx^{2j+1})
    d/dzbar^j = 1/2 (d/dx^{2j} + i d/dx^{2j+1})
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "TensorField",
    "deriv_holo",
    "deriv_antiholo",
    "grad_holo",
    "grad_antiholo",
    "integrate",
    "weighted_mean",
    "random_bandlimited",
    "make_rng",
    "fourier_coefficients",
    "evaluate_series",
    "write_snapshot",
    "read_snapshot",
]

BACKENDS = ("spectral", "fd4")


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the unit real 2n-torus.

    Parameters
    ----------
    n : int
        Complex dimension, 1 <= n <= 3.
    sizes : tuple of int
        Points per real axis (2n entries, powers of two >= 8).
    backend : str
        ``"spectral"`` (default) or ``"fd4"`` (4th-order central differences,
        kept for cross-validation).
    """

    n: int
    sizes: tuple[int, ...]
    backend: str = "spectral"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not 1 <= self.n <= 3:
            raise ValueError(f"complex dimension must be 1..3, got {self.n}")
        if len(self.sizes) != 2 * self.n:
            raise ValueError(f"need {2 * self.n} axis sizes, got {len(self.sizes)}")
        for s in self.sizes:
            if s < 8 or s & (s - 1):
                raise ValueError(f"axis sizes must be powers of two >= 8, got {s}")
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")

    @classmethod
    def uniform(cls, n: int, size: int, backend: str = "spectral") -> "Grid":
        return cls(n, (size,) * (2 * n), backend)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.sizes

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(2 * self.n))

    @property
    def period(self) -> float:
        return 1.0

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(1.0 / s for s in self.sizes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    @property
    def npoints(self) -> int:
        return int(np.prod(self.sizes))

    def coords(self) -> list[np.ndarray]:
        """Open meshgrid of real coordinates, one broadcastable array per axis."""
        out = []
        for a, s in enumerate(self.sizes):
            shp = [1] * self.ndim
            shp[a] = s
            out.append((np.arange(s) / s).reshape(shp))
        return out

    def wavenumbers(self, zero_nyquist: bool = True) -> list[np.ndarray]:
        out = []
        for a, s in enumerate(self.sizes):
            k = np.fft.fftfreq(s, d=1.0 / s)
            if zero_nyquist:
                k[s // 2] = 0.0
            shp = [1] * self.ndim
            shp[a] = s
            out.append(k.reshape(shp))
        return out

    @cached_property
    def _symbols(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.wavenumbers()
        hol = np.empty((self.n,) + self.shape, dtype=complex)
        anti = np.empty_like(hol)
        for j in range(self.n):
            kx, ky = k[2 * j], k[2 * j + 1]
            # 1/2 (2 pi i kx - i 2 pi i ky) and its conjugate partner
            hol[j] = np.pi * (1j * kx + ky)
            anti[j] = np.pi * (1j * kx - ky)
        return hol, anti

    @cached_property
    def _ddbar_symbols(self) -> dict:
        """Real-to-real symbols of Re and Im of d_kbar d_j on the rfft half spectrum.

        d_kbar d_j = 1/4 (dx_k dx_j + dy_k dy_j) + i/4 (dy_k dx_j - dx_k dy_j).
        """
        ks = []
        for a, s in enumerate(self.sizes):
            last = a == self.ndim - 1
            k = np.fft.rfftfreq(s, d=1.0 / s) if last else np.fft.fftfreq(s, d=1.0 / s)
            k[s // 2] = 0.0
            shp = [1] * self.ndim
            shp[a] = k.size
            ks.append(k.reshape(shp))
        c = -np.pi**2
        out = {}
        for k in range(self.n):
            for j in range(k, self.n):
                xk, yk, xj, yj = ks[2 * k], ks[2 * k + 1], ks[2 * j], ks[2 * j + 1]
                re = c * (xk * xj + yk * yj)
                im = None if j == k else c * (yk * xj - xk * yj)
                out[k, j] = (re, im)
        return out

    def zeros(self, *comp: int, dtype=complex) -> np.ndarray:
        return np.zeros(self.shape + tuple(comp), dtype=dtype)


# --------------------------------------------------------------------------
# differentiation


def _check_axis(grid: Grid, j: int) -> None:
    if not 0 <= j < grid.n:
        raise IndexError(f"complex axis {j} out of range for n={grid.n}")


def _expand(sym: np.ndarray, ncomp: int) -> np.ndarray:
    return sym.reshape(sym.shape + (1,) * ncomp)


def _fd4(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (
        -np.roll(f, -2, axis) + 8 * np.roll(f, -1, axis)
        - 8 * np.roll(f, 1, axis) + np.roll(f, 2, axis)
    ) / (12 * h)


def _wirtinger_fd(grid: Grid, f: np.ndarray, j: int, sign: int) -> np.ndarray:
    dx = _fd4(f, 2 * j, grid.spacings[2 * j])
    dy = _fd4(f, 2 * j + 1, grid.spacings[2 * j + 1])
    return 0.5 * (dx - sign * 1j * dy)


def _spectral(grid: Grid, f: np.ndarray, sym: np.ndarray) -> np.ndarray:
    ncomp = f.ndim - grid.ndim
    fh = sfft.fftn(f, axes=grid.axes)
    return sfft.ifftn(_expand(sym, ncomp) * fh, axes=grid.axes)


def deriv_holo(grid: Grid, f: np.ndarray, j: int) -> np.ndarray:
    """d/dz^j of every component of ``f``."""
    _check_axis(grid, j)
    if grid.backend == "fd4":
        return _wirtinger_fd(grid, f, j, +1)
    return _spectral(grid, f, grid._symbols[0][j])


def deriv_antiholo(grid: Grid, f: np.ndarray, j: int) -> np.ndarray:
    """d/dzbar^j of every component of ``f``."""
    _check_axis(grid, j)
    if grid.backend == "fd4":
        return _wirtinger_fd(grid, f, j, -1)
    return _spectral(grid, f, grid._symbols[1][j])


def _grad(grid: Grid, f: np.ndarray, which: int) -> np.ndarray:
    ncomp = f.ndim - grid.ndim
    if grid.backend == "fd4":
        sign = 1 if which == 0 else -1
        parts = [_wirtinger_fd(grid, f, j, sign) for j in range(grid.n)]
    else:
        fh = sfft.fftn(f, axes=grid.axes)
        syms = grid._symbols[which]
        parts = [sfft.ifftn(_expand(syms[j], ncomp) * fh, axes=grid.axes)
                 for j in range(grid.n)]
    return np.stack(parts, axis=grid.ndim)


def grad_holo(grid: Grid, f: np.ndarray) -> np.ndarray:
    """All holomorphic partials; the new index is the first component index."""
    return _grad(grid, f, 0)


def grad_antiholo(grid: Grid, f: np.ndarray) -> np.ndarray:
    """All antiholomorphic partials; the new index is the first component index."""
    return _grad(grid, f, 1)


# --------------------------------------------------------------------------
# quadrature


def integrate(grid: Grid, weight, f) -> complex:
    """Riemann sum of ``f * weight``.

    ``weight`` is det(chi); the constant n! 2^n between det(chi) dLeb and the
    volume form chi^n is dropped, since every caller takes a ratio.
    """
    w = np.broadcast_to(np.asarray(weight), grid.shape)
    if np.iscomplexobj(w):
        if np.abs(w.imag).max() > 1e-12 * max(np.abs(w.real).max(), 1.0):
            raise ValueError("integration weight must be real")
        w = w.real
    if w.min() <= 0:
        raise ValueError("integration weight must be positive")
    f = np.broadcast_to(np.asarray(f), grid.shape)
    return complex(np.sum(f * w) * grid.cell_volume)


def weighted_mean(grid: Grid, weight, f) -> float:
    num = integrate(grid, weight, f)
    den = integrate(grid, weight, 1.0)
    return (num / den).real


# --------------------------------------------------------------------------
# random band-limited fields


def make_rng(seed) -> np.random.Generator:
    """Counter-based generator; spawn children from the SeedSequence to split."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def _mode_mask(grid: Grid, max_mode: int) -> np.ndarray:
    k = grid.wavenumbers(zero_nyquist=False)
    mask = np.ones(grid.shape, dtype=bool)
    for ka in k:
        mask = mask & (np.abs(ka) <= max_mode)
    return mask


def _random_complex_series(grid, max_mode, rng):
    mask = _mode_mask(grid, max_mode)
    coef = np.zeros(grid.shape, dtype=complex)
    m = int(mask.sum())
    coef[mask] = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return sfft.ifftn(coef, axes=grid.axes) * grid.npoints


def random_bandlimited(grid: Grid, max_mode: int, amplitude: float, seed,
                       symmetry: str = "real") -> np.ndarray:
    """Seeded truncated Fourier series with modes |k_a| <= max_mode on every axis.

    ``symmetry="real"`` returns a real scalar field scaled to sup-norm
    ``amplitude``.  ``symmetry="hermitian-matrix"`` returns an n x n
    Hermitian-matrix-valued field (shape ``grid.shape + (n, n)``) whose largest
    component modulus is ``amplitude``.  ``symmetry="complex"`` returns a
    complex scalar field.
    """
    for s in grid.sizes:
        if max_mode > s // 4:
            raise ValueError(f"max_mode {max_mode} exceeds size/4 = {s // 4}")
    if max_mode < 0:
        raise ValueError("max_mode must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    n = grid.n
    if symmetry == "real":
        out = _random_complex_series(grid, max_mode, rng).real
    elif symmetry == "complex":
        out = _random_complex_series(grid, max_mode, rng)
    elif symmetry == "hermitian-matrix":
        a = np.empty(grid.shape + (n, n), dtype=complex)
        for i in range(n):
            for j in range(n):
                a[..., i, j] = _random_complex_series(grid, max_mode, rng)
        out = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    else:
        raise ValueError(f"unknown symmetry {symmetry!r}")
    peak = np.abs(out).max()
    if amplitude == 0 or peak == 0:
        return np.zeros_like(out)
    return out * (amplitude / peak)


def fourier_coefficients(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Coefficients c_k with f(x) = sum_k c_k exp(2 pi i k.x)."""
    return sfft.fftn(f, axes=grid.axes) / grid.npoints


def evaluate_series(grid: Grid, coef: np.ndarray, points: np.ndarray,
                    max_mode: int) -> np.ndarray:
    """Evaluate a truncated series at arbitrary points by direct summation.

    ``points`` has shape (P, 2n).  Only modes |k_a| <= max_mode are used, so the
    result is exact for fields band-limited to max_mode.  Used as an oracle
    independent of the FFT path.
    """
    kept = np.nonzero(_mode_mask(grid, max_mode))
    kvec = np.stack([np.fft.fftfreq(s, 1.0 / s)[idx]
                     for s, idx in zip(grid.sizes, kept)], axis=1)
    c = coef[kept]
    phase = np.exp(2j * np.pi * points @ kvec.T)
    return phase @ c.reshape(c.shape[0], -1)


# --------------------------------------------------------------------------
# snapshots


@dataclass
class TensorField:
    """Grid-sampled tensor with an index signature.

    Signature characters: ``l`` holo-lower, ``b`` antiholo-lower, ``u``
    holo-upper, ``B`` antiholo-upper.  ``values`` has shape
    ``grid.shape + (n,) * len(signature)``.
    """

    grid: Grid
    values: np.ndarray
    signature: str = ""
    name: str = "field"
    hermitian: tuple[int, int] | None = field(default=None)

    def __post_init__(self):
        expect = self.grid.shape + (self.grid.n,) * len(self.signature)
        if self.values.shape != expect:
            raise ValueError(f"values shape {self.values.shape} != {expect}")
        if set(self.signature) - set("lbuB"):
            raise ValueError(f"bad signature {self.signature!r}")
        if self.hermitian is not None:
            i, j = self.hermitian
            r = self.grid.ndim
            v = self.values
            err = np.abs(v - np.conj(np.swapaxes(v, r + i, r + j))).max()
            if err > 1e-12 * max(np.abs(v).max(), 1.0):
                raise ValueError(f"hermitian_flag violated by {err:.3e}")


def write_snapshot(path, tf: TensorField) -> None:
    """One JSON header line then raw little-endian complex128 (re, im interleaved)."""
    header = {
        "name": tf.name,
        "signature": tf.signature,
        "n": tf.grid.n,
        "sizes": list(tf.grid.sizes),
        "dtype": "f64-le",
        "layout": "row-major, complex interleaved re,im",
    }
    data = np.ascontiguousarray(tf.values, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(data.tobytes(order="C"))


def read_snapshot(path) -> TensorField:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode())
    if header.get("dtype") != "f64-le":
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    grid = Grid(header["n"], tuple(header["sizes"]))
    shape = grid.shape + (grid.n,) * len(header["signature"])
    values = np.frombuffer(raw[nl + 1:], dtype="<c16").reshape(shape).copy()
    return TensorField(grid, values, header["signature"], header["name"])
