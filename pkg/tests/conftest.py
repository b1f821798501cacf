import numpy as np
import pytest

from flowconn import settings
from flowconn.curves import sample_curve
from flowconn.flow import BrownianDriver, FlowConfig
from flowconn.geometry import Circle, Ellipsoid, Plane, Sphere, Torus


@pytest.fixture
def sphere():
    return Sphere(3)


@pytest.fixture
def circle():
    return Circle()


@pytest.fixture
def plane():
    return Plane(3, 2)


@pytest.fixture
def torus():
    return Torus(2.0, 1.0)


@pytest.fixture
def ellipsoid():
    return Ellipsoid(1.0, 2.0, 3.0)


@pytest.fixture
def quarter_circle(sphere):
    return sample_curve(sphere, "quarter-great-circle", 400)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def flow_config():
    return FlowConfig(h=1e-4)


@pytest.fixture
def make_driver():
    def build(m, horizon=1e-3, seed=42, h=1e-4, antithetic=True):
        return BrownianDriver(seed, h, horizon, m.ambient_dim, antithetic=antithetic)

    return build


@pytest.fixture
def single_thread(monkeypatch):
    monkeypatch.setattr(settings, "threads", 1)
