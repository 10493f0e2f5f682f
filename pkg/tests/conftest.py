import numpy as np
import pytest

from robust_cofc.crl import Problem, TrainConfig
from robust_cofc.drivecycle import DriveCycle
from robust_cofc.powertrain import SocEnvelope, VehicleParams


def wavy_cycle(n_steps=40, peak=15.0):
    t = np.arange(n_steps + 1)
    return DriveCycle(peak * np.abs(np.sin(t / 5.0)), name="wavy")


@pytest.fixture
def small_problem():
    cycle = wavy_cycle()
    return Problem(cycle, VehicleParams(), SocEnvelope.default(cycle.n_steps))


@pytest.fixture
def tiny_cfg():
    return TrainConfig(epochs=3, hidden=(8, 8), episodes_per_epoch=2, minibatch_size=32, kappa=0.5)
