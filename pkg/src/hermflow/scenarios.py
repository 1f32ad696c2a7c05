"""Problem instances: background metric chi, data f, initial potential u0 and F.

A :class:`ScenarioSpec` is plain data that round-trips through JSON.  Field
specs are small dicts with a ``kind`` key:

metric
    ``identity``; ``constant`` (``re``, ``im`` matrices); ``diag_cos``
    (chi = diag(1, 1 + epsilon cos 2 pi x^1, ...)); ``random`` (``max_mode``,
    ``amplitude``; identity plus a seeded Hermitian perturbation, shrunk until
    min_eig >= 0.5); ``fourier`` (``terms``, see below).
f
    ``zero``; ``sin`` (``amplitude``, optional ``axis`` and ``mode``);
    ``random`` (``max_mode``, ``amplitude``); ``fourier``.
u0
    ``zero``; ``random`` (``max_mode``, ``amplitude`` and ``auto_scale``; with
    auto-scaling the field is shrunk until min_eig(h) >= ``min_eig_h``);
    ``fourier``.

A Fourier term is ``{"mode": [k_0, ..., k_{2n-1}], "re": c, "im": c}`` with c a
scalar (scalar fields) or an n x n matrix (metrics); it contributes
(C e^{2 pi i k.x} + conj) / 2 for scalars and (C e^{2 pi i k.x} + C^H e^{-2 pi i k.x}) / 2
for matrices, so a zero mode with real C adds C itself.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .calculus import Grid, make_rng, random_bandlimited
from .chern import MetricError, MetricField, build_metric, generalized_eigvals
from .flow import FFamily, FlowProblem, ddbar

__all__ = [
    "ScenarioSpec",
    "Scenario",
    "Validation",
    "BUILTINS",
    "builtin",
    "builtin_names",
    "describe",
    "validate",
    "realize",
    "spec_from_dict",
    "spec_to_dict",
]

MIN_EIG_CHI = 0.5
MIN_EIG_H = 1e-3
DEFAULT_MIN_EIG_H_U0 = 0.25

_SPEC_KEYS = {"name", "n", "sizes", "metric", "f", "u0", "F", "seed"}
_FIELD_KEYS = {
    "metric": {
        "identity": set(),
        "constant": {"re", "im"},
        "diag_cos": {"epsilon", "axis"},
        "random": {"max_mode", "amplitude"},
        "fourier": {"terms"},
    },
    "f": {
        "zero": set(),
        "sin": {"amplitude", "axis", "mode"},
        "random": {"max_mode", "amplitude"},
        "fourier": {"terms"},
    },
    "u0": {
        "zero": set(),
        "random": {"max_mode", "amplitude", "auto_scale", "min_eig_h"},
        "fourier": {"terms"},
    },
}


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    n: int
    sizes: tuple
    metric: dict
    f: dict
    u0: dict
    F: str = "log"
    seed: int = 0

    def with_F(self, F) -> "ScenarioSpec":
        return ScenarioSpec(self.name, self.n, self.sizes, self.metric, self.f, self.u0,
                            FFamily.parse(F).label, self.seed)


@dataclass
class Scenario:
    """A realized spec: arrays ready for :func:`hermflow.flow.run_flow`."""

    spec: ScenarioSpec
    grid: Grid
    chi: MetricField
    f: np.ndarray
    u0: np.ndarray
    F: FFamily

    @property
    def problem(self) -> FlowProblem:
        return FlowProblem(self.grid, self.chi, self.f, self.F)


@dataclass
class Validation:
    ok: bool
    spec: ScenarioSpec
    diagnostics: list = field(default_factory=list)
    witness: dict | None = None

    def __bool__(self):
        return self.ok


# --------------------------------------------------------------------------
# serialization


def spec_to_dict(spec: ScenarioSpec) -> dict:
    d = asdict(spec)
    d["sizes"] = list(spec.sizes)
    return d


def _check_keys(where, got, allowed):
    extra = set(got) - set(allowed)
    if extra:
        raise ValueError(f"unknown key(s) in {where}: {sorted(extra)}")


def spec_from_dict(d: dict) -> ScenarioSpec:
    """Strict parse; unknown keys anywhere raise ValueError."""
    if not isinstance(d, dict):
        raise ValueError("scenario must be an object")
    _check_keys("scenario", d, _SPEC_KEYS)
    for k in ("name", "n", "metric", "f", "u0"):
        if k not in d:
            raise ValueError(f"scenario is missing {k!r}")
    n = int(d["n"])
    sizes = d.get("sizes", [16] * (2 * n))
    if isinstance(sizes, int):
        sizes = [sizes] * (2 * n)
    for part in ("metric", "f", "u0"):
        sub = d[part]
        if not isinstance(sub, dict) or "kind" not in sub:
            raise ValueError(f"{part} needs a 'kind'")
        kinds = _FIELD_KEYS[part]
        if sub["kind"] not in kinds:
            raise ValueError(f"unknown {part} kind {sub['kind']!r}; expected one of {sorted(kinds)}")
        _check_keys(part, set(sub) - {"kind"}, kinds[sub["kind"]])
    F = FFamily.parse(d.get("F", "log")).label
    return ScenarioSpec(str(d["name"]), n, tuple(int(s) for s in sizes),
                        copy.deepcopy(d["metric"]), copy.deepcopy(d["f"]),
                        copy.deepcopy(d["u0"]), F, int(d.get("seed", 0)))


# --------------------------------------------------------------------------
# builtins


def _flat_kahler():
    return ScenarioSpec("flat_kahler", 1, (64, 64), {"kind": "identity"},
                        {"kind": "sin", "amplitude": 0.4},
                        {"kind": "random", "max_mode": 2, "amplitude": 1.0}, "log", 1)


def _perturbed_kahler():
    return ScenarioSpec("perturbed_kahler", 2, (16,) * 4,
                        {"kind": "constant", "re": [[1.3, 0.2], [0.2, 0.9]],
                         "im": [[0.0, 0.15], [-0.15, 0.0]]},
                        {"kind": "sin", "amplitude": 0.3},
                        {"kind": "random", "max_mode": 1, "amplitude": 1.0}, "log", 2)


def _nonkahler_torus():
    return ScenarioSpec("nonkahler_torus", 2, (16,) * 4, {"kind": "diag_cos", "epsilon": 0.3},
                        {"kind": "sin", "amplitude": 0.3},
                        {"kind": "random", "max_mode": 1, "amplitude": 1.0}, "log", 3)


def _random_hermitian():
    return ScenarioSpec("random_hermitian", 2, (16,) * 4,
                        {"kind": "random", "max_mode": 1, "amplitude": 0.3},
                        {"kind": "random", "max_mode": 1, "amplitude": 0.3},
                        {"kind": "random", "max_mode": 1, "amplitude": 1.0}, "log", 4)


BUILTINS = {
    "flat_kahler": (_flat_kahler, "n=1, 64x64, chi = identity (Kahler, no torsion)"),
    "perturbed_kahler": (_perturbed_kahler, "n=2, 16^4, constant non-identity Hermitian chi"),
    "nonkahler_torus": (_nonkahler_torus,
                        "n=2, 16^4, chi = diag(1, 1 + 0.3 cos 2 pi x^1), nonzero torsion"),
    "random_hermitian": (_random_hermitian, "n=2, 16^4, seeded band-limited Hermitian chi"),
}


def builtin_names() -> list[str]:
    return sorted(BUILTINS)


def builtin(name: str, F=None, seed: int | None = None) -> ScenarioSpec:
    if name not in BUILTINS:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(builtin_names())}")
    spec = BUILTINS[name][0]()
    if seed is not None:
        spec = ScenarioSpec(spec.name, spec.n, spec.sizes, spec.metric, spec.f, spec.u0,
                            spec.F, int(seed))
    if F is not None:
        spec = spec.with_F(F)
    return spec


def describe(name: str) -> str:
    return BUILTINS[name][1]


# --------------------------------------------------------------------------
# field construction


def _streams(seed: int):
    metric, f, u0 = np.random.SeedSequence(int(seed)).spawn(3)
    return {"metric": metric, "f": f, "u0": u0}


def _fourier_scalar(grid: Grid, terms) -> np.ndarray:
    x = grid.coords()
    out = np.zeros(grid.shape)
    for t in terms:
        k = np.asarray(t["mode"], dtype=float)
        if k.shape != (grid.ndim,):
            raise ValueError(f"mode {t['mode']} needs {grid.ndim} entries")
        phase = 2 * np.pi * sum(ka * xa for ka, xa in zip(k, x))
        c = complex(t.get("re", 0.0), t.get("im", 0.0))
        out = out + (c * np.exp(1j * phase)).real
    return out


def _fourier_matrix(grid: Grid, terms) -> np.ndarray:
    n = grid.n
    x = grid.coords()
    out = np.zeros(grid.shape + (n, n), dtype=complex)
    for t in terms:
        k = np.asarray(t["mode"], dtype=float)
        if k.shape != (grid.ndim,):
            raise ValueError(f"mode {t['mode']} needs {grid.ndim} entries")
        c = np.asarray(t.get("re", np.zeros((n, n))), float) + 1j * np.asarray(
            t.get("im", np.zeros((n, n))), float)
        e = np.exp(2j * np.pi * sum(ka * xa for ka, xa in zip(k, x)))
        e = np.broadcast_to(e, grid.shape)[..., None, None]
        out += 0.5 * (c * e + np.conj(c.T) * np.conj(e))
    return out


def _max_mode_of(terms) -> int:
    return max((int(np.abs(t["mode"]).max()) for t in terms), default=0)


def _metric_components(grid: Grid, spec: dict, ss) -> tuple[np.ndarray, dict]:
    """Components plus the (possibly amplitude-shrunk) spec actually used."""
    n = grid.n
    kind = spec["kind"]
    if kind == "identity":
        return np.broadcast_to(np.eye(n, dtype=complex), grid.shape + (n, n)).copy(), spec
    if kind == "constant":
        m = np.asarray(spec["re"], float) + 1j * np.asarray(spec.get("im", np.zeros((n, n))), float)
        if m.shape != (n, n):
            raise ValueError(f"constant metric must be {n}x{n}")
        return np.broadcast_to(m, grid.shape + (n, n)).copy(), spec
    if kind == "diag_cos":
        eps = float(spec.get("epsilon", 0.3))
        axis = int(spec.get("axis", 0))
        x = grid.coords()[axis]
        out = np.zeros(grid.shape + (n, n), dtype=complex)
        out[..., 0, 0] = 1.0
        for j in range(1, n):
            out[..., j, j] = 1.0 + eps * np.cos(2 * np.pi * x)
        return out, spec
    if kind == "random":
        mm = int(spec.get("max_mode", 1))
        amp = float(spec.get("amplitude", 0.3))
        pert = random_bandlimited(grid, mm, 1.0, make_rng(ss), "hermitian-matrix")
        base = np.eye(n)
        for _ in range(60):
            comp = base + amp * pert
            if generalized_eigvals(comp, np.broadcast_to(base, comp.shape))[..., 0].min() >= MIN_EIG_CHI:
                break
            amp *= 0.7
        used = dict(spec, amplitude=amp)
        return comp.astype(complex), used
    if kind == "fourier":
        return _fourier_matrix(grid, spec["terms"]), spec
    raise ValueError(f"unknown metric kind {kind!r}")


def _f_field(grid: Grid, spec: dict, ss) -> np.ndarray:
    kind = spec["kind"]
    if kind == "zero":
        return grid.zeros(dtype=float)
    if kind == "sin":
        a = float(spec.get("amplitude", 0.3))
        axis = int(spec.get("axis", 0))
        mode = int(spec.get("mode", 1))
        x = grid.coords()
        return a * np.sin(2 * np.pi * mode * x[axis]) + grid.zeros(dtype=float)
    if kind == "random":
        return random_bandlimited(grid, int(spec.get("max_mode", 1)),
                                  float(spec.get("amplitude", 0.3)), make_rng(ss), "real")
    if kind == "fourier":
        return _fourier_scalar(grid, spec["terms"])
    raise ValueError(f"unknown f kind {kind!r}")


def _h_min_eig(grid: Grid, chi: MetricField, u: np.ndarray) -> np.ndarray:
    return generalized_eigvals(chi.components + ddbar(grid, u), chi.components)[..., 0]


def _u0_field(grid: Grid, spec: dict, ss, chi: MetricField) -> tuple[np.ndarray, dict]:
    kind = spec["kind"]
    if kind == "zero":
        return grid.zeros(dtype=float), spec
    if kind == "fourier":
        return _fourier_scalar(grid, spec["terms"]), spec
    if kind != "random":
        raise ValueError(f"unknown u0 kind {kind!r}")
    mm = int(spec.get("max_mode", 1))
    amp = float(spec.get("amplitude", 1.0))
    shape = random_bandlimited(grid, mm, 1.0, make_rng(ss), "real")
    if not spec.get("auto_scale", True):
        return amp * shape, spec
    target = float(spec.get("min_eig_h", DEFAULT_MIN_EIG_H_U0))
    # shrink by bisection on the scale so that min_eig(h) lands just above target
    if _h_min_eig(grid, chi, amp * shape).min() < target:
        lo, hi = 0.0, amp
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if _h_min_eig(grid, chi, mid * shape).min() >= target:
                lo = mid
            else:
                hi = mid
        amp = lo
    return amp * shape, dict(spec, amplitude=amp, auto_scale=False)


def _band_ok(grid: Grid, max_mode: int) -> bool:
    return max_mode <= min(grid.sizes) // 4


# --------------------------------------------------------------------------
# validation


def _witness(grid, field_):
    idx = np.unravel_index(np.argmin(field_), field_.shape)
    return {"point": [int(i) for i in idx], "value": float(field_[idx])}


def validate(spec: ScenarioSpec) -> Validation:
    """Check every invariant of a spec; never raises for bad data.

    The returned spec has shrunk amplitudes and frozen u0 scaling when those
    were applied, so realizing it again reproduces the same arrays.
    """
    diags: list[str] = []
    try:
        grid = Grid(spec.n, tuple(spec.sizes))
    except ValueError as exc:
        return Validation(False, spec, [f"grid: {exc}"])
    try:
        FFamily.parse(spec.F)
    except (ValueError, KeyError) as exc:
        return Validation(False, spec, [f"F: {exc}"])

    for part in ("metric", "f", "u0"):
        sub = getattr(spec, part)
        mm = int(sub.get("max_mode", 1)) if sub["kind"] == "random" else (
            _max_mode_of(sub["terms"]) if sub["kind"] == "fourier" else
            int(sub.get("mode", 1)) if sub["kind"] == "sin" else 1)
        if not _band_ok(grid, mm):
            diags.append(f"{part}: max mode {mm} exceeds size/4 = {min(grid.sizes) // 4}")
    if diags:
        return Validation(False, spec, diags)

    ss = _streams(spec.seed)
    try:
        comp, metric_used = _metric_components(grid, spec.metric, ss["metric"])
        chi = build_metric(grid, comp, check=False)
    except (ValueError, MetricError) as exc:
        return Validation(False, spec, [f"metric: {exc}"])
    herm = float(np.abs(comp - np.conj(np.swapaxes(comp, -1, -2))).max())
    if herm > 1e-12:
        diags.append(f"metric: not Hermitian (defect {herm:.3e})")
    eig = generalized_eigvals(comp, np.broadcast_to(np.eye(spec.n), comp.shape))[..., 0]
    if eig.min() < MIN_EIG_CHI:
        w = _witness(grid, eig)
        return Validation(False, spec, diags + [
            f"metric: min eigenvalue {w['value']:.4g} < {MIN_EIG_CHI} at {tuple(w['point'])}"], w)

    try:
        f = _f_field(grid, spec.f, ss["f"])
    except (ValueError, KeyError) as exc:
        return Validation(False, spec, [f"f: {exc}"])
    if not np.all(np.isfinite(f)):
        diags.append("f: non-finite values")

    try:
        u0, u0_used = _u0_field(grid, spec.u0, ss["u0"], chi)
    except (ValueError, KeyError) as exc:
        return Validation(False, spec, [f"u0: {exc}"])
    lam = _h_min_eig(grid, chi, u0)
    witness = None
    if lam.min() < MIN_EIG_H:
        witness = _witness(grid, lam)
        diags.append(f"u0: h(u0) min eigenvalue {witness['value']:.4g} < {MIN_EIG_H} "
                     f"at {tuple(witness['point'])}")
    used = ScenarioSpec(spec.name, spec.n, tuple(spec.sizes), metric_used, spec.f, u0_used,
                        spec.F, spec.seed)
    return Validation(not diags, used, diags, witness)


def realize(spec: ScenarioSpec) -> Scenario:
    """Validate and build arrays; raises ValueError with the diagnostics on failure."""
    v = validate(spec)
    if not v.ok:
        raise ValueError("; ".join(v.diagnostics))
    s = v.spec
    grid = Grid(s.n, tuple(s.sizes))
    ss = _streams(s.seed)
    comp, _ = _metric_components(grid, s.metric, ss["metric"])
    chi = build_metric(grid, comp)
    f = _f_field(grid, s.f, ss["f"])
    u0, _ = _u0_field(grid, s.u0, ss["u0"], chi)
    return Scenario(s, grid, chi, f, u0, FFamily.parse(s.F))


def dumps(spec: ScenarioSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2, sort_keys=True)
