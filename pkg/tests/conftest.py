import numpy as np
import pytest

from mdbd.oracle import solve_reference
from mdbd.problem import generate_instance, scalar_regression_instance

DESK_SEED = 7


@pytest.fixture(scope="session")
def desk():
    net, cert = generate_instance(DESK_SEED, 10, 4)
    return net, cert


@pytest.fixture(scope="session")
def desk_net(desk):
    return desk[0]


@pytest.fixture(scope="session")
def desk_saddle(desk_net):
    return solve_reference(desk_net, 1e-7)


@pytest.fixture(scope="session")
def scalar_net():
    return scalar_regression_instance(0.2, 0.6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_run(desk_net, desk_saddle):
    """Forward-Euler MDBD run from the zero state, h = 1e-3 up to t = 80."""
    from mdbd.dynamics import initial_state, mdbd_field
    from mdbd.integrator import IntegratorConfig, integrate

    cfg = IntegratorConfig(step=1e-3, horizon=80.0, record_every=100)
    rec, avg = integrate(desk_net, mdbd_field, initial_state(desk_net), cfg, reference=desk_saddle)
    return cfg, rec, avg
