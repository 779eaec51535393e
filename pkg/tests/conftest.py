import numpy as np
import pytest

from geolab.surface import sphere, ellipsoid
from geolab.flow import PhaseState
from geolab.fermi import build_chart


@pytest.fixture(scope="session")
def sphere_spec():
    return sphere()


@pytest.fixture(scope="session")
def ellipsoid_spec():
    return ellipsoid([2.0, np.sqrt(2.0), 1.0])


@pytest.fixture(scope="session")
def equator_chart(sphere_spec):
    s0 = PhaseState([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    return build_chart(sphere_spec, s0, np.pi, dt=0.005)


@pytest.fixture(scope="session")
def ellipsoid_xy_chart(ellipsoid_spec):
    s0 = PhaseState([2.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    return build_chart(ellipsoid_spec, s0, 4.0, dt=0.005)
