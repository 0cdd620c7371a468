import numpy as np
import pytest

from wnsfid import RationalTransferFunction


@pytest.fixture(scope="session")
def bench_system():
    """Second-order plant with ARMA(1,1) noise and unit feedback, the system
    used throughout the accuracy tests."""
    G = RationalTransferFunction.from_coeffs([0.0, 1.0, 0.1], [1.0, -0.5, 0.75])
    H = RationalTransferFunction.from_coeffs([1.0, 0.7], [1.0, -0.9])
    K = RationalTransferFunction.from_coeffs([1.0])
    return G, H, K


@pytest.fixture(scope="session")
def bench_theta():
    return np.array([-0.5, 0.75, 1.0, 0.1])
