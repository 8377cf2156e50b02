"""Shared fixtures: default parameters and a session-wide mode bank."""

import numpy as np
import pytest

from flexcable import pod, scenarios
from flexcable.control import PidController, PidGains, sweep_reference
from flexcable.fdm import FdmConfig, FdmState, simulate
from flexcable.params import CableParams, QuadParams


@pytest.fixture(scope="session")
def cable():
    return CableParams()


@pytest.fixture(scope="session")
def quad():
    return QuadParams()


@pytest.fixture(scope="session")
def sim_cfg():
    return scenarios.load_config("sim")


@pytest.fixture(scope="session")
def sweep_record(cable, quad):
    """40 s gentle head sweep from a horizontal cable (the default collection run)."""
    state = FdmState.straight(100, cable.length, direction=(-1.0, 0.0, 0.0))
    rec = simulate(state, cable, quad, 40.0, PidController(cable, quad, PidGains(), sweep_reference), FdmConfig(100, 5e-4))
    rec.meta["length"] = cable.length
    return rec


@pytest.fixture(scope="session")
def sweep_tensor(sweep_record):
    return pod.collect_snapshots(sweep_record, 10, 0.02)


@pytest.fixture(scope="session")
def full_bank(sweep_tensor):
    """All modes of the sweep data (K = 11 columns available)."""
    return pod.modes_from_tensor(sweep_tensor, 11)


@pytest.fixture(scope="session")
def bank(full_bank):
    return full_bank.truncate(3)


@pytest.fixture(scope="session")
def bank_dir(tmp_path_factory, sweep_tensor, bank):
    """Snapshot and bank files written through the I/O layer."""
    from flexcable import io

    d = tmp_path_factory.mktemp("bank")
    io.write_snapshots(d / "snapshots.npz", sweep_tensor)
    io.write_bank(d / "bank.csv", bank)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
