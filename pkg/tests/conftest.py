import sys
import numpy as np
import pytest

from symheckman import simulate
from symheckman.selmodel import ParamVector


def scenario_data(n=200, seed=7, key="1", **overrides):
    cfg = simulate.scenario(key, n=n, seed=seed, **overrides)
    return cfg, simulate.generate_dataset(cfg, simulate.replicate_rng(seed, 0))


def jitter_theta(truth, rng, scale=0.3):
    """A random parameter point near ``truth`` (same layout)."""
    x = truth.to_array() + rng.uniform(-scale, scale, truth.to_array().size)
    return ParamVector.from_array(x, truth.dims, truth.log_nu is not None)


@pytest.fixture(scope="session")
def s1_small():
    return scenario_data(200)


@pytest.fixture(scope="session")
def s1_large():
    return scenario_data(2000, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
