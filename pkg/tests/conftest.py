from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from breakwater_design.environment import DomainConfig, synthetic_case

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile("default")

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def dom() -> DomainConfig:
    return synthetic_case()


@pytest.fixture(scope="session")
def small_dom() -> DomainConfig:
    return synthetic_case(16)


@pytest.fixture
def open_water():
    """8x8 all-water domain with one target, for simple geometric checks."""
    return DomainConfig(
        width=8,
        height=8,
        bathymetry=np.full((8, 8), 10.0),
        land_mask=np.zeros((8, 8), bool),
        prohibited_mask=np.zeros((8, 8), bool),
        targets=((6, 6),),
        name="open",
    )


@pytest.fixture
def echo_cmd():
    """Command line for the external-model stand-in script."""

    def make(*args: str) -> list[str]:
        return [sys.executable, str(FIXTURES / "echo_model.py"), *args]

    return make


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    return pytestconfig.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
