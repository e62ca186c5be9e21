import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from csge.synth import generate, scenario_catalog
from csge.training import SplitPlan, TrainConfig, fit_csge, prepare

settings.register_profile("csge", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("csge")


@functools.lru_cache(maxsize=None)
def small_run(name: str, n_origins: int = 240, seed: int = 0):
    """Trained model on a shrunken catalog scenario, cached across tests."""
    spec = scenario_catalog()[name].with_(n_origins=n_origins)
    data = generate(spec)
    model, report, prepared = fit_csge(data, list(spec.forecasters), TrainConfig(zeta=0.0),
                                       SplitPlan(seed=seed))
    return data, model, report, prepared


@pytest.fixture(scope="session")
def mme_small():
    return small_run("mme-day-ahead")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> bool:
    """Keep one PASS/FAIL line per acceptance criterion for the terminal summary."""
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
