import numpy as np
import pytest


def rel_error(a, b, floor_frac=1e-4):
    """Largest componentwise relative error between two gradient vectors.

    Components far below the vector's scale are measured against
    ``floor_frac * max|b|`` instead of their own tiny magnitude, where the
    finite-difference oracle's O(eps^2) truncation error would dominate.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    floor = max(floor_frac * float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
