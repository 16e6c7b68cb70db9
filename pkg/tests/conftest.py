import numpy as np
import pytest

from entqkd.scenario import load_preset
from entqkd.simulator import generate_run

# lines recorded by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def truth_mask(alice_index, bob_index, truth):
    """Which (alice, bob) index pairs are true pairs."""
    scale = np.int64(1) << 32
    key = np.asarray(alice_index, np.int64) * scale + np.asarray(bob_index, np.int64)
    tkey = truth.alice_index.astype(np.int64) * scale + truth.bob_index.astype(np.int64)
    return np.isin(key, tkey)


@pytest.fixture(scope="session")
def at_alice_cfg():
    return load_preset("at-alice")


@pytest.fixture(scope="session")
def short_run(at_alice_cfg):
    """Ten seconds of the 35 dB scenario with its clock offset, drift and fading."""
    return generate_run(at_alice_cfg, duration_s=10.0, seed=11)


@pytest.fixture(scope="session")
def quiet_run(at_alice_cfg):
    """Fading off and no clock drift: a stationary 35 dB run."""
    cfg = at_alice_cfg.replace(bob_fading_sigma=0.0, clock_drift_ns_per_s=0.0,
                               clock_drift_noise_ns_per_sqrt_s=0.0)
    return generate_run(cfg, duration_s=20.0, seed=5)
