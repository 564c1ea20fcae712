"""Shared fixtures.

Trained models are expensive, so the leave-one-user-out fold models on the
standard cohort are built once per session and reused by the unit tests that
need a realistic model and by the acceptance suite.
"""

import time

import numpy as np
import pytest
from hypothesis import settings

from walkmode import synthgait as sg
from walkmode.experiments import experiment_config, louo_models

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

COHORT_SEED = 0
FOLD_TIMING: dict[str, float] = {}


@pytest.fixture(scope="session")
def cohort():
    return sg.standard_dataset(5, COHORT_SEED)


@pytest.fixture(scope="session")
def tcn_cfg():
    return experiment_config(COHORT_SEED)


@pytest.fixture(scope="session")
def fold_models(cohort, tcn_cfg):
    """One TCN per held-out user, trained on the other four."""
    start = time.perf_counter()
    models = louo_models(cohort, tcn_cfg)
    FOLD_TIMING["seconds"] = time.perf_counter() - start
    return models


@pytest.fixture(scope="session")
def trained_model(fold_models):
    """Model that has never seen user 4."""
    return fold_models[4]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
