"""Command-line entry point.

    hermflow run --config PATH --out DIR [--t-max X] [--seed N]
    hermflow verify --suite all|calculus|geometry|inequality|evolution
                    [--seed N] [--resolution R] [--samples K] [--report PATH]
    hermflow scenario list
    hermflow scenario show NAME

Exit codes: 0 success, 1 usage or config error, 2 verification failure,
3 runtime failure.

A run config is a JSON object.  Unknown keys are errors::

    {
      "scenario": "nonkahler_torus",          # builtin name or inline spec object
      "F": "exp",                             # optional override of the scenario's F
      "seed": 3,                              # optional override of the scenario seed
      "t_max": 10.0,
      "snapshot_every": 500,                  # accepted steps between phi snapshots
      "output_dir": "runs/nk",                # optional; --out wins
      "step_policy": {"scheme": "rk2", "safety": 0.25, ...},
      "monitors": {"A": 10, "B": 5, "identity_cadence": 16, "identity_dt": 0.002},
      "calibrate": true                       # fit the identity tolerance model first
    }
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, monitors, scenarios
from .calculus import TensorField, write_snapshot
from .flow import StepFailure, StepPolicy, propose_dt, initial_state, run_flow

log = logging.getLogger("hermflow")

EXIT_OK, EXIT_CONFIG, EXIT_VERIFY, EXIT_RUNTIME = 0, 1, 2, 3

_RUN_KEYS = {"scenario", "F", "seed", "t_max", "snapshot_every", "output_dir", "step_policy",
             "monitors", "calibrate"}
_POLICY_KEYS = {f.name for f in dataclasses.fields(StepPolicy)} - {"t_max"}
_MONITOR_KEYS = {f.name for f in dataclasses.fields(monitors.MonitorConfig)}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: scenarios.ScenarioSpec
    policy: StepPolicy = field(default_factory=StepPolicy)
    monitor: monitors.MonitorConfig = field(default_factory=monitors.MonitorConfig)
    output_dir: Path | None = None
    snapshot_every: int = 1000
    t_max: float = 10.0
    seed: int = 0
    calibrate: bool = True

    def as_dict(self) -> dict:
        return {
            "scenario": scenarios.spec_to_dict(self.scenario),
            "step_policy": dataclasses.asdict(self.policy),
            "monitors": dataclasses.asdict(self.monitor),
            "output_dir": str(self.output_dir) if self.output_dir else None,
            "snapshot_every": self.snapshot_every,
            "t_max": self.t_max,
            "seed": self.seed,
            "calibrate": self.calibrate,
        }


def _strict(where, d, allowed):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(extra)}")


def parse_config(d: dict, t_max: float | None = None, seed: int | None = None,
                 out: str | None = None) -> RunConfig:
    """Build a RunConfig from a decoded JSON object; command-line values win."""
    _strict("config", d, _RUN_KEYS)
    if "scenario" not in d:
        raise ConfigError("config is missing 'scenario'")
    sc = d["scenario"]
    try:
        if isinstance(sc, str):
            spec = scenarios.builtin(sc)
        else:
            spec = scenarios.spec_from_dict(sc)
        if seed is None and "seed" in d:
            seed = int(d["seed"])
        if seed is not None:
            spec = dataclasses.replace(spec, seed=int(seed))
        if "F" in d:
            spec = spec.with_F(d["F"])
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"scenario: {exc}") from None

    t_max = float(d.get("t_max", 10.0)) if t_max is None else float(t_max)
    if not t_max > 0:
        raise ConfigError("t_max must be positive")
    pol = d.get("step_policy", {})
    _strict("step_policy", pol, _POLICY_KEYS)
    mon = d.get("monitors", {})
    _strict("monitors", mon, _MONITOR_KEYS)
    try:
        policy = StepPolicy(t_max=t_max, **pol)
        monitor = monitors.MonitorConfig(**mon)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    every = d.get("snapshot_every", 1000)
    if not isinstance(every, int) or isinstance(every, bool) or every < 1:
        raise ConfigError("snapshot_every must be an integer >= 1")
    calibrate = d.get("calibrate", True)
    if not isinstance(calibrate, bool):
        raise ConfigError("calibrate must be true or false")
    out_dir = out if out is not None else d.get("output_dir")
    return RunConfig(spec, policy, monitor, Path(out_dir) if out_dir else None, every, t_max,
                     spec.seed, calibrate)


def load_config(path, **overrides) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON at line {exc.lineno} column {exc.colno}: "
                          f"{exc.msg}") from None
    return parse_config(d, **overrides)


# --------------------------------------------------------------------------
# run


def _write_phi(path, grid, phi):
    write_snapshot(path, TensorField(grid, phi.astype(complex), "", "phi"))


def execute(cfg: RunConfig) -> dict:
    """Run a validated config, writing every artifact into cfg.output_dir.

    Returns the summary dict that is also written to ``report.json``.
    """
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    v = scenarios.validate(cfg.scenario)
    if not v.ok:
        raise ConfigError("scenario invalid: " + "; ".join(v.diagnostics))
    sc = scenarios.realize(v.spec)
    problem = sc.problem

    models = {}
    if cfg.calibrate and cfg.monitor.identity_cadence:
        dt0 = min(cfg.monitor.identity_dt, propose_dt(problem, initial_state(problem, sc.u0),
                                                      cfg.policy))
        models = monitors.calibrate(problem, sc.u0, dt0, cfg.monitor, cfg.policy.scheme)

    t0 = time.perf_counter()
    csv_path = out / "timeseries.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(monitors.CSV_COLUMNS)
        report = run_flow(problem, sc.u0, cfg.policy, cfg.monitor,
                          snapshot_dir=out / "snapshots", snapshot_every=cfg.snapshot_every,
                          on_record=lambda rec: writer.writerow(rec.csv_row()))
    elapsed = time.perf_counter() - t0
    _write_phi(out / "phi_final.bin", sc.grid, report.final_state.phi)

    with open(out / "identities.txt", "w") as fh:
        for name, m in sorted(models.items()):
            fh.write(f"# model {name} C1={m.C1:.6e} C2={m.C2:.6e} factor={m.factor:g}\n")
        for r in report.identity_reports:
            m = models.get(r.name)
            tag = "" if m is None else f" within_model={str(m.ok(r)).lower()}"
            fh.write(r.line() + tag + "\n")

    recs = report.records
    init = report.initial
    H_lo, H_hi = init.H_min, init.H_max
    summary = report.summary()
    summary.update({
        "scenario": v.spec.name,
        "F": v.spec.F,
        "seed": v.spec.seed,
        "elapsed_s": elapsed,
        "csv_rows": len(recs),
        "H_min_initial": H_lo,
        "H_max_initial": H_hi,
        "H_max_increase": max((b.H_max - a.H_max for a, b in zip([init] + recs, recs)),
                              default=0.0),
        "H_min_decrease": max((a.H_min - b.H_min for a, b in zip([init] + recs, recs)),
                              default=0.0),
        "amgm_margin_min": min((r.amgm_margin for r in recs), default=init.amgm_margin),
        "amgm_inv_margin_min": min((r.amgm_inv_margin for r in recs),
                                   default=init.amgm_inv_margin),
        "sup_dtu": max((r.sup_dtu for r in recs), default=init.sup_dtu),
        "speed_bound": problem.F.max_abs_on(H_lo, H_hi),
        "c2_diag_max": max((r.c2_diag for r in recs), default=init.c2_diag),
        "identity_checks": len(report.identity_reports),
        "identity_outside_model": sum(
            1 for r in report.identity_reports if r.name in models and not models[r.name].ok(r)),
        "config": cfg.as_dict(),
        "version": __version__,
    })
    if recs:
        k = max(1, len(recs) // 10)
        summary["c2_diag_early_max"] = max(r.c2_diag for r in recs[:k])
    (out / "report.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True)
                                     + "\n")
    return summary


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, t_max=args.t_max, seed=args.seed, out=args.out)
        if cfg.output_dir is None:
            raise ConfigError("no output directory: pass --out or set output_dir")
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        summary = execute(cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except StepFailure as exc:
        log.error("step failure at t=%.6g step %d: %s (dt history %s)",
                  exc.state.t if exc.state else math.nan,
                  exc.state.step_index if exc.state else -1, exc, list(exc.dt_history))
        return EXIT_RUNTIME
    except Exception as exc:   # anything else is a failure of the run, not the config
        log.error("runtime failure: %s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    log.info("%s: %s after %d steps, t=%.6g, c=%.10g", summary["scenario"],
             summary["termination"], summary["steps"], summary["final_time"], summary["c_mean"])
    return EXIT_OK


# --------------------------------------------------------------------------
# verify and scenario


def cmd_verify(args) -> int:
    from . import verify
    try:
        checks = verify.run_suite(args.suite, seed=args.seed, resolution=args.resolution,
                                  samples=args.samples)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    summary = verify.summarize(checks)
    summary.update({"suite": args.suite, "seed": args.seed})
    text = json.dumps(_jsonable(summary), indent=2, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n")
        if args.verbose:
            Path(args.report).with_suffix(".checks.json").write_text(
                json.dumps(_jsonable([c.as_dict() for c in checks]), indent=1) + "\n")
    print(text)
    return EXIT_OK if summary["ok"] else EXIT_VERIFY


def cmd_scenario(args) -> int:
    if args.action == "list":
        for name in scenarios.builtin_names():
            print(f"{name:18s} {scenarios.describe(name)}")
        return EXIT_OK
    if not args.name:
        log.error("scenario show needs a name")
        return EXIT_CONFIG
    try:
        print(scenarios.dumps(scenarios.builtin(args.name)))
    except KeyError as exc:
        log.error("%s", exc.args[0])
        return EXIT_CONFIG
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hermflow",
                                description="Parabolic complex Monge-Ampere flow on Hermitian tori.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the flow for one config")
    r.add_argument("--config", required=True)
    r.add_argument("--out")
    r.add_argument("--t-max", type=float, dest="t_max")
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run an invariant suite")
    v.add_argument("--suite", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--resolution", type=int)
    v.add_argument("--samples", type=int)
    v.add_argument("--report", help="also write the JSON report here")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("scenario", help="inspect builtin scenarios")
    s.add_argument("action", choices=("list", "show"))
    s.add_argument("name", nargs="?")
    s.set_defaults(func=cmd_scenario)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
