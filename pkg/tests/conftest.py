import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "numeric",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("numeric")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture(scope="session")
def circle_mesh_16():
    from bemlab import build_mesh, circle

    return build_mesh(circle(0.4), 16)


@pytest.fixture(scope="session")
def circle_ws_16(circle_mesh_16):
    from bemlab.operators import Workspace

    return Workspace(circle_mesh_16)


@pytest.fixture(scope="session")
def square_mesh_8():
    from bemlab import build_mesh, square

    return build_mesh(square(0.5), 8)


@pytest.fixture(scope="session")
def slit_mesh_4():
    from bemlab import build_mesh, slit

    return build_mesh(slit(0.5), 4)


@pytest.fixture(scope="session")
def unit_segment_mesh():
    from bemlab import build_mesh, polygon

    return build_mesh(polygon([(0.0, 0.0), (1.0, 0.0)], closed=False), 1)
