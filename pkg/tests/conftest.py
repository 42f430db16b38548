"""Shared fixtures. Corpora are simulated once per test session."""

import numpy as np
import pytest

from mtdc_protect.core import FaultKind, Pole, ScenarioSpec
from mtdc_protect.gridsim.scenario import gen_corpus, run_scenario
from mtdc_protect.learner import train_bundle
from mtdc_protect import recipes


@pytest.fixture(scope="session")
def train_corpus():
    return gen_corpus(recipes.training_recipe())


@pytest.fixture(scope="session")
def bundle(train_corpus):
    return train_bundle(train_corpus)


@pytest.fixture(scope="session")
def eval_corpus():
    return gen_corpus(recipes.evaluation_recipe())


@pytest.fixture(scope="session")
def noisy_eval_corpus():
    return gen_corpus(recipes.noisy_evaluation_recipe())


@pytest.fixture(scope="session")
def soak_corpus():
    return gen_corpus(recipes.noise_soak_recipe())


@pytest.fixture(scope="session")
def p2p_105():
    return run_scenario(ScenarioSpec(fault=FaultKind.P2P, location_km=105.0, impedance_ohm=0.0))


@pytest.fixture(scope="session")
def p2g_low_105():
    return run_scenario(ScenarioSpec(fault=FaultKind.P2G_LOW, location_km=105.0, impedance_ohm=1.0,
                                     pole=Pole.POSITIVE))


@pytest.fixture(scope="session")
def p2g_300_105():
    return run_scenario(ScenarioSpec(fault=FaultKind.P2G_HIGH, location_km=105.0, impedance_ohm=300.0,
                                     pole=Pole.POSITIVE))


@pytest.fixture(scope="session")
def p2g_500_105():
    return run_scenario(ScenarioSpec(fault=FaultKind.P2G_HIGH, location_km=105.0, impedance_ohm=500.0,
                                     pole=Pole.POSITIVE))


@pytest.fixture(scope="session")
def normal_record():
    return run_scenario(ScenarioSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance summary ---------------------------------------------------------


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])


@pytest.fixture
def verdict(request):
    """verdict(n, title, ok, detail): record and print one PASS/FAIL line, then assert."""

    def _record(n, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:>2}: {title}" + (f" | {detail}" if detail else "")
        request.config.acceptance_lines[n] = line
        print(line)
        assert ok, line

    return _record
