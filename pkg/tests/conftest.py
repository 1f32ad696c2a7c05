import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest

from hermflow import scenarios
from hermflow.flow import StepPolicy, run_flow
from hermflow.monitors import MonitorConfig

F_FAMILIES = ("log", "power(2)", "exp")

# acceptance lines, printed at the end of the session
ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def frozen():
    return json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())


@pytest.fixture
def record_criterion():
    def rec(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE.append(line)
        print(line)
    return rec


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@dataclass
class RunOutcome:
    name: str
    F: str
    scenario: object
    records: list
    initial: object
    termination: str
    converged: bool
    c_estimate: tuple
    phi: np.ndarray
    det_h: np.ndarray
    elapsed: float
    sampled_u: list = field(default_factory=list)


def _sample_every(name, F):
    if F != "log":
        return 0
    return 16 if name == "nonkahler_torus" else 256


@pytest.fixture(scope="session")
def flow_matrix():
    """Full runs of every builtin scenario under every F family.

    Identity checks are off here (they have their own criterion); potentials
    are sampled along the F = log runs for the inequality checks.
    """
    out = {}
    for name in scenarios.builtin_names():
        for F in F_FAMILIES:
            sc = scenarios.realize(scenarios.builtin(name, F=F))
            every = _sample_every(name, F)
            samples = []

            def keep(state, every=every, samples=samples):
                if every and state.step_index % every == 0:
                    samples.append(state.u.copy())

            t0 = time.perf_counter()
            rep = run_flow(sc.problem, sc.u0, StepPolicy(), MonitorConfig(identity_cadence=0),
                           on_state=keep)
            elapsed = time.perf_counter() - t0
            out[name, F] = RunOutcome(name, F, sc, rep.records, rep.initial, rep.termination,
                                      rep.converged, rep.c_estimate, rep.final_state.phi,
                                      rep.final_state.geom.det_h, elapsed, samples)
    return out
