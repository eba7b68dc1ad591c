"""Shared fixtures for the anisopt test suite."""

import pytest

from anisopt.control_set import ControlBounds
from anisopt.mesh import build_mesh
from anisopt.plap import RegParams


@pytest.fixture
def bounds() -> ControlBounds:
    return ControlBounds(xi1=0.5, xi2=2.0, alpha=0.5, gamma=10.0)


@pytest.fixture
def mesh_1d():
    return build_mesh(1, 16)


@pytest.fixture
def mesh_2d():
    return build_mesh(2, 8)


@pytest.fixture
def reg() -> RegParams:
    return RegParams(epsilon=1e-2, k=8.0)
