"""
Pytest configuration and shared fixtures for the pxpscars tests.
"""

import os
import sys
import tempfile

import numpy as np
import pytest

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Orbit frequency used by the monodromy tests; tau/8 is then a whole number of steps of tau/2000
TEST_ORBIT_FREQUENCY = 1.0 / 3.0


@pytest.fixture
def orbit_frequency():
    """Fixed orbit angular frequency for tangent-space tests"""
    return TEST_ORBIT_FREQUENCY


@pytest.fixture
def rng():
    """Seeded generator for random test points"""
    return np.random.default_rng(20240611)


@pytest.fixture
def small_basis():
    """Open N=4 constrained basis"""
    from services.quantum import build_basis

    return build_basis(4, "open")


@pytest.fixture
def basis_n10():
    """Open N=10 constrained basis"""
    from services.quantum import build_basis

    return build_basis(10, "open")


@pytest.fixture
def z2_state_n10(basis_n10):
    """Z2 product state on the N=10 basis"""
    from services.quantum import z2_state

    return z2_state(basis_n10)


@pytest.fixture
def output_root():
    """Temporary directory holding run directories"""
    with tempfile.TemporaryDirectory() as directory:
        yield directory


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Keep user environment settings out of the configuration tests"""
    for name in ("PXPSCARS_OUTPUT_DIR", "PXPSCARS_MAX_BASIS_DIM", "PXPSCARS_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)
