"""Invariant suites behind ``hermflow verify``.

Each suite returns a list of :class:`Check` rows; a suite passes iff every row
does.  Rows carry the seed and, where meaningful, the grid location of the
worst violation so a failure can be reproduced in isolation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict, field

import numpy as np

from .calculus import (Grid, deriv_antiholo, deriv_holo, fourier_coefficients, grad_antiholo,
                       grad_holo, integrate, make_rng, random_bandlimited)
from .chern import chern_connection, check_commutations, metric_compatibility
from . import ay_inequality as ay
from . import monitors
from .flow import FlowProblem, FFamily, ddbar

SUITES = ("calculus", "geometry", "inequality", "evolution")

COMMUTATION_TOL = 1e-8
COMPATIBILITY_TOL = 1e-11
MARGIN_TOL = 1e-7
REDUCTION_TOL = 1e-8
MIN_ORDER = 1.8
REAL_TOL = 1e-9
# below this every residual is roundoff (e.g. a linear flow, where the
# centered difference of RK2 states is exact) and an order is meaningless
ROUNDOFF_FLOOR = 1e-8


@dataclass
class Check:
    suite: str
    name: str
    value: float
    tol: float
    ok: bool
    seed: int | None = None
    location: list | None = None
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        for k in ("value", "tol"):
            if not math.isfinite(d[k]):
                d[k] = repr(d[k])
        return d


def _leq(suite, name, value, tol, **kw) -> Check:
    value = float(value)
    return Check(suite, name, value, tol, bool(value <= tol), **kw)


def _rel(a, b):
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))


# --------------------------------------------------------------------------
# calculus


def _cosine_field(grid, rng, count=3):
    """Sum of plane cosines with closed-form Wirtinger derivatives."""
    kmax = min(grid.sizes) // 4
    x = grid.coords()
    f = 0.0
    df = [0.0] * grid.n
    dfb = [0.0] * grid.n
    for _ in range(count):
        k = rng.integers(-kmax, kmax + 1, size=grid.ndim)
        a, theta = rng.uniform(0.5, 1.5), rng.uniform(0, 2 * math.pi)
        arg = 2 * math.pi * sum(int(ka) * xa for ka, xa in zip(k, x)) + theta
        f = f + a * np.cos(arg)
        s = -2 * math.pi * a * np.sin(arg)
        for j in range(grid.n):
            df[j] = df[j] + 0.5 * s * (k[2 * j] - 1j * k[2 * j + 1])
            dfb[j] = dfb[j] + 0.5 * s * (k[2 * j] + 1j * k[2 * j + 1])
    shape = grid.shape
    return (np.broadcast_to(f, shape), [np.broadcast_to(d, shape) for d in df],
            [np.broadcast_to(d, shape) for d in dfb])


def suite_calculus(seed: int = 0, resolution: int = 16, samples: int = 4) -> list[Check]:
    out = []
    for n in (1, 2):
        grid = Grid.uniform(n, resolution if n == 1 else min(resolution, 16))
        M = min(grid.sizes) // 4
        for s in range(seed, seed + samples):
            rng = make_rng(s)
            f, df, dfb = _cosine_field(grid, rng)
            err = max(max(_rel(deriv_holo(grid, f, j), df[j]),
                          _rel(deriv_antiholo(grid, f, j), dfb[j])) for j in range(n))
            out.append(_leq("calculus", f"closed_form_derivative_n{n}", err, 1e-11, seed=s))

            a = random_bandlimited(grid, M, 1.0, rng, "complex")
            b = random_bandlimited(grid, M, 1.0, rng, "complex")
            mixed = max(_rel(deriv_holo(grid, deriv_antiholo(grid, a, k), j),
                             deriv_antiholo(grid, deriv_holo(grid, a, j), k))
                        for j in range(n) for k in range(n))
            out.append(_leq("calculus", f"mixed_partials_commute_n{n}", mixed, 1e-11, seed=s))

            lhs = integrate(grid, 1.0, deriv_holo(grid, a, 0) * b)
            rhs = -integrate(grid, 1.0, a * deriv_holo(grid, b, 0))
            scale = max(abs(rhs), integrate(grid, 1.0, np.abs(a) * np.abs(deriv_holo(grid, b, 0))).real)
            out.append(_leq("calculus", f"integration_by_parts_n{n}", abs(lhs - rhs) / scale,
                            1e-11, seed=s))

            c = fourier_coefficients(grid, a)
            p = integrate(grid, 1.0, np.abs(a) ** 2).real
            out.append(_leq("calculus", f"parseval_n{n}",
                            abs(p - float(np.sum(np.abs(c) ** 2))) / p, 1e-12, seed=s))

            u = random_bandlimited(grid, M, 1.0, rng, "real")
            ref = grad_holo(grid, grad_antiholo(grid, u))      # [j, k] = d_j d_kbar u
            out.append(_leq("calculus", f"ddbar_real_transform_n{n}",
                            _rel(ddbar(grid, u), np.swapaxes(ref, -1, -2)), 1e-11, seed=s))
            out.append(_leq("calculus", f"real_field_imag_n{n}",
                            float(np.abs(np.imag(u)).max()), 1e-13, seed=s))
        out.append(_leq("calculus", f"unit_volume_n{n}",
                        abs(integrate(grid, 1.0, grid.zeros() + 1) - 1), 1e-14))
    return out


# --------------------------------------------------------------------------
# geometry


def suite_geometry(seed: int = 0, resolution: int = 16, samples: int = 20) -> list[Check]:
    out = []
    for n in (1, 2):
        grid = Grid.uniform(n, resolution if n == 1 else min(resolution, 16))
        for s in range(seed, seed + samples):
            ss = np.random.SeedSequence(s).spawn(2)
            chi = ay.random_metric(grid, 2, 0.1, make_rng(ss[0]))
            chern = chern_connection(grid, chi)
            res = check_commutations(grid, chi, make_rng(ss[1]), chern=chern)
            for name, r in res.items():
                out.append(_leq("geometry", f"commutation_{name}_n{n}", r, COMMUTATION_TOL,
                                seed=s))
            out.append(_leq("geometry", f"metric_compatibility_n{n}",
                            metric_compatibility(grid, chi, chern), COMPATIBILITY_TOL, seed=s))
            T = chern.torsion
            anti = float(np.abs(T + np.swapaxes(T, -1, -2)).max())
            out.append(_leq("geometry", f"torsion_antisymmetry_n{n}", anti, 1e-14, seed=s))
            if n == 1:
                out.append(_leq("geometry", "torsion_vanishes_n1", float(np.abs(T).max()),
                                1e-12, seed=s))
    return out


# --------------------------------------------------------------------------
# inequality


def _margin_checks(kind, rows):
    out = []
    for r in rows:
        out.append(Check("inequality", f"{kind}_margin", r.relative_margin, -MARGIN_TOL,
                         bool(r.relative_margin >= -MARGIN_TOL), seed=r.seed,
                         location=list(r.location),
                         detail={"min_margin": r.min_margin, "scale": r.scale}))
        out.append(_leq("inequality", f"{kind}_realness", r.imag_ratio, REAL_TOL, seed=r.seed))
    return out


def suite_inequality(seed: int = 0, resolution: int = 8, samples: int = 200) -> list[Check]:
    size = max(8, resolution if resolution <= 16 else 16)
    seeds = range(seed, seed + samples)
    out = _margin_checks("general_pair", ay.fuzz_theorem3(seeds, size=size))
    out += _margin_checks("potential_pair", ay.fuzz_corollary(seeds, size=size))
    grid = Grid.uniform(2, size)
    for s in range(seed, seed + min(samples, 10)):
        ss = np.random.SeedSequence(s + 20_000).spawn(2)
        chi = ay.random_metric(grid, 2, 0.15, make_rng(ss[0]))
        u = ay.random_potential(grid, chi, 2, 0.05, make_rng(ss[1]))
        out.append(_leq("inequality", "alpha_free_reduction",
                        ay.consistency_theorem3_vs_corollary(grid, chi, u), REDUCTION_TOL, seed=s))
    return out


# --------------------------------------------------------------------------
# evolution


def evolution_cases(seed: int = 0):
    """(label, problem, u, dt0) states on which the identities are refined.

    The non-Kahler state is deliberately small so cubic products stay resolved
    on 16^4; larger potentials push the residual onto an aliasing floor.
    """
    from . import scenarios
    sc = scenarios.realize(scenarios.builtin("flat_kahler"))
    cases = []
    for F in ("log", "power(1)", "exp"):
        cases.append((f"flat_kahler/{F}", FlowProblem(sc.grid, sc.chi, sc.f, FFamily.parse(F)),
                      sc.u0, 1e-4))
    grid = Grid.uniform(2, 16)
    ss = np.random.SeedSequence(int(seed)).spawn(3)
    chi = ay.random_metric(grid, 1, 0.1, make_rng(ss[0]))
    f = random_bandlimited(grid, 1, 0.1, make_rng(ss[1]))
    u = ay.random_potential(grid, chi, 1, 0.003, make_rng(ss[2]))
    for F in ("log", "exp"):
        cases.append((f"random_hermitian_small/{F}",
                      FlowProblem(grid, chi, f, FFamily.parse(F)), u, 2e-3))
    return cases


def suite_evolution(seed: int = 0, resolution: int | None = None, samples: int = 1,
                    levels: int = 3) -> list[Check]:
    out = []
    for label, problem, u, dt0 in evolution_cases(seed):
        for name in monitors.IDENTITIES:
            res, orders = monitors.refinement_orders(problem, u, name, dt0, levels=levels)
            order = min(orders)
            exact = max(r.residual for r in res) < ROUNDOFF_FLOOR
            out.append(Check("evolution", f"order_{name}", order, MIN_ORDER,
                             bool(order >= MIN_ORDER or exact), seed=seed,
                             detail={"case": label, "orders": orders, "exact": exact,
                                     "residuals": [r.residual for r in res]}))
            if name != "lemma_H":
                imag = max(r.imag_ratio for r in res)
                out.append(_leq("evolution", f"rhs_real_{name}", imag, REAL_TOL, seed=seed,
                                detail={"case": label}))
    return out


_RUNNERS = {
    "calculus": suite_calculus,
    "geometry": suite_geometry,
    "inequality": suite_inequality,
    "evolution": suite_evolution,
}


def run_suite(name: str, seed: int = 0, resolution: int | None = None,
              samples: int | None = None) -> list[Check]:
    names = SUITES if name == "all" else (name,)
    for s in names:
        if s not in _RUNNERS:
            raise ValueError(f"unknown suite {name!r}; expected all or one of {SUITES}")
    out = []
    for s in names:
        kw = {"seed": seed}
        if resolution is not None:
            kw["resolution"] = resolution
        if samples is not None:
            kw["samples"] = samples
        out.extend(_RUNNERS[s](**kw))
    return out


def summarize(checks: list[Check]) -> dict:
    failed = [c for c in checks if not c.ok]
    by_suite = {}
    for c in checks:
        d = by_suite.setdefault(c.suite, {"checks": 0, "failed": 0})
        d["checks"] += 1
        d["failed"] += not c.ok
    return {"ok": not failed, "suites": by_suite,
            "failures": [c.as_dict() for c in failed]}
