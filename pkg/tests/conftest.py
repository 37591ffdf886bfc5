"""Shared fixtures: the reference firms and cached planner fits."""

import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riskshare.experiment import planner_for
from riskshare.scenario import bundled

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def entropic_scenario():
    return bundled("entropic-duopoly")


@pytest.fixture(scope="session")
def avar_scenario():
    return bundled("avar-duopoly")


@pytest.fixture(scope="session")
def entropic_firms(entropic_scenario):
    return entropic_scenario.firm_specs()


@pytest.fixture(scope="session")
def avar_firms(avar_scenario):
    return avar_scenario.firm_specs()


_FITS = {}


def fitted(scenario, freeze_tbr=None, **solver):
    """Planner fitted on ``scenario``; cached so several test modules share one run."""
    key = (scenario.name, freeze_tbr, tuple(sorted(solver.items())))
    if key not in _FITS:
        s = scenario.with_solver(freeze_tbr=freeze_tbr, **solver)
        start = time.perf_counter()
        planner = planner_for(s).fit(s.firm_specs())
        planner.fit_seconds_ = time.perf_counter() - start
        _FITS[key] = planner
    return _FITS[key]


@pytest.fixture(scope="session")
def duopoly(entropic_scenario):
    return fitted(entropic_scenario)


@pytest.fixture(scope="session")
def monopoly1(entropic_scenario):
    return fitted(entropic_scenario, 1.0)


@pytest.fixture(scope="session")
def monopoly2(entropic_scenario):
    return fitted(entropic_scenario, 0.0)


@pytest.fixture(scope="session")
def avar_fit(avar_scenario):
    return fitted(avar_scenario)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
