import os

import pytest

from maxent_hjb import ControlBox, build_grid
from maxent_hjb.benchmarks import (
    linear_channel_model,
    vdp_control_box,
    vdp_plane_cost,
    vdp_plane_model,
    zero_running_cost,
)


@pytest.fixture(scope="session")
def unit_box():
    return ControlBox(lower=[-1.0], upper=[1.0])


@pytest.fixture(scope="session")
def unit_grid(unit_box):
    return build_grid(unit_box, nodes_per_dim=64)


@pytest.fixture(scope="session")
def channel_model():
    return linear_channel_model()


@pytest.fixture(scope="session")
def zero_cost():
    return zero_running_cost()


@pytest.fixture(scope="session")
def vdp_model():
    return vdp_plane_model()


@pytest.fixture(scope="session")
def vdp_cost():
    return vdp_plane_cost()


@pytest.fixture(scope="session")
def vdp_box():
    return vdp_control_box()


@pytest.fixture(scope="session")
def vdp_grid(vdp_box):
    return build_grid(vdp_box, nodes_per_dim=64)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MAXENT_HJB_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="slow; set MAXENT_HJB_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
