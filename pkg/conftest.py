"""
Shared scenarios and cached runs for the test suite.
"""

from pathlib import Path

import pytest

from config import ground_truth, load_scenario, with_overrides
from cosim import run
from transmission import GridEvent

ROOT = Path(__file__).resolve().parent
SCENARIOS = ROOT / "scenarios"


@pytest.fixture(scope="session")
def standard_config():
    return load_scenario(SCENARIOS / "standard.json")


@pytest.fixture(scope="session")
def agc_config():
    return load_scenario(SCENARIOS / "standard_agc.json")


@pytest.fixture(scope="session")
def short_config(standard_config):
    """The standard grid compressed to 0.6 s: fault at 0.2 s, clear at 0.28 s, trip at 0.4 s."""
    events = [
        GridEvent("three_phase_fault", 0.2, 0.2),
        GridEvent("fault_clear", 0.28),
        GridEvent("gen_trip", 0.4, 40.0, "G3"),
    ]
    return with_overrides(standard_config, duration=0.6, events=events)


@pytest.fixture(scope="session")
def short_run(short_config):
    return run(short_config)


@pytest.fixture(scope="session")
def short_reference(short_config):
    return run(ground_truth(short_config))


@pytest.fixture(scope="session")
def standard_runs(standard_config):
    """Runs of the standard scenario, computed once per session and keyed by the overrides that change it."""
    cache = {}

    def get(**changes):
        key = tuple(sorted((k, v) for k, v in changes.items() if getattr(standard_config, k) != v))
        if key not in cache:
            cache[key] = run(with_overrides(standard_config, **changes))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def standard_reference(standard_config):
    return run(ground_truth(standard_config))
