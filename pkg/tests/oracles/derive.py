"""Regenerate frozen.json: closed-form values used as test oracles.

Run with ``python tests/oracles/derive.py``.  Needs sympy, which the package
itself does not use; the frozen numbers are what the tests read.

Axis convention: real axis 2j is Re z^j, axis 2j+1 is Im z^j, and
d/dz = (d/dx - i d/dy)/2, d/dzbar = (d/dx + i d/dy)/2.
"""
import json
from pathlib import Path

import sympy as sp

x0, x1, x2, x3 = sp.symbols("x0 x1 x2 x3", real=True)
X = (x0, x1, x2, x3)
pi = sp.pi


def dz(f, j):
    return (sp.diff(f, X[2 * j]) - sp.I * sp.diff(f, X[2 * j + 1])) / 2


def dzb(f, j):
    return (sp.diff(f, X[2 * j]) + sp.I * sp.diff(f, X[2 * j + 1])) / 2


def cnum(v):
    v = complex(sp.N(v, 30))
    return [v.real, v.imag]


# sample points as grid indices on a 16-per-axis grid
POINTS_2D = [(0, 0), (3, 5), (7, 2), (11, 13), (15, 9)]
POINTS_4D = [(0, 0, 0, 0), (3, 5, 1, 7), (7, 2, 9, 4), (11, 13, 6, 0), (15, 9, 12, 3)]
N = 16


def at(expr, idx):
    return expr.subs({X[a]: sp.Rational(i, N) for a, i in enumerate(idx)})


out = {"grid_size": N, "points_2d": POINTS_2D, "points_4d": POINTS_4D}

# d/dz^1 of exp(2 pi i (x^1 + x^2)) on the n = 1 torus
plane = sp.exp(2 * pi * sp.I * (x0 + x1))
out["dz_plane_wave"] = [cnum(at(dz(plane, 0), p)) for p in POINTS_2D]
out["dzbar_plane_wave"] = [cnum(at(dzb(plane, 0), p)) for p in POINTS_2D]

# torsion of chi = diag(1, 1 + eps sin 2 pi x^1), n = 2
eps = sp.Rational(3, 10)
chi = sp.diag(1, 1 + eps * sp.sin(2 * pi * x0))
inv = chi.inv()
# Gamma^p_{jq} = chi^{p rbar} d_j chi_{rbar q}; chi[r, q] stores chi_{rbar q}
gamma = [[[sp.simplify(sum(inv[p, r] * dz(chi[r, q], j) for r in range(2)))
           for q in range(2)] for j in range(2)] for p in range(2)]
T = [[[sp.simplify(gamma[p][j][q] - gamma[p][q][j]) for q in range(2)] for j in range(2)]
     for p in range(2)]
out["torsion_diag_sin"] = {
    "epsilon": 0.3,
    "T_1_0_1": [cnum(at(T[1][0][1], p)) for p in POINTS_4D],
    "max_abs_other": max(float(abs(sp.N(at(T[p][j][q], pt))))
                         for p in range(2) for j in range(2) for q in range(2)
                         if (p, j, q) not in ((1, 0, 1), (1, 1, 0)) for pt in POINTS_4D),
}

# chi = diag(1, 1 + eps cos 2 pi x^1): determinant and torsion sup
chi_c = sp.diag(1, 1 + eps * sp.cos(2 * pi * x0))
out["diag_cos_det"] = [float(sp.N(at(chi_c.det(), p))) for p in POINTS_4D]
t_c = sp.simplify(dz(chi_c[1, 1], 0) / chi_c[1, 1])
grid_vals = [abs(complex(sp.N(t_c.subs(x0, sp.Rational(i, N))))) for i in range(N)]
out["diag_cos_torsion_sup_grid16"] = max(grid_vals)

# flat chi, u = a sin 2 pi x^1, n = 1: u_{1bar 1} and det h
a = sp.Rational(1, 20)
u = a * sp.sin(2 * pi * x0)
u11 = sp.simplify(dz(dzb(u, 0), 0))
out["flat_sin_potential"] = {
    "amplitude": 0.05,
    "u_11": [float(sp.N(at(u11, p))) for p in POINTS_2D],
    "det_h": [float(sp.N(at(1 + u11, p))) for p in POINTS_2D],
}

# flat Laplacian of sin 2 pi x^1
f = sp.sin(2 * pi * x0)
lap = sp.simplify(dz(dzb(f, 0), 0))
out["flat_laplacian_sin"] = [float(sp.N(at(lap, p))) for p in POINTS_2D]

# integral over the unit torus of exp(0.3 sin 2 pi x) = I_0(0.3)
s = sp.symbols("s")
out["mean_exp_sin_0p3"] = float(sp.N(sp.besseli(0, sp.Rational(3, 10)), 20))

Path(__file__).with_name("frozen.json").write_text(json.dumps(out, indent=1) + "\n")
print("wrote", Path(__file__).with_name("frozen.json"))
