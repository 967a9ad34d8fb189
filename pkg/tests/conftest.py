"""Shared fixtures: the default tabletop layout used across the suite."""

import pytest

from biphoton import OpticalConfig, SlitGeometry


@pytest.fixture(scope="session")
def geom() -> SlitGeometry:
    return SlitGeometry()


@pytest.fixture(scope="session")
def opt() -> OpticalConfig:
    return OpticalConfig()
