import os

import numpy as np
import pytest

from veig.rng import RngStream


def scale(n, floor=1):
    """Scale a sample/trial budget by VEIG_TEST_SCALE (default 1.0)."""
    factor = float(os.environ.get("VEIG_TEST_SCALE", "1.0"))
    return max(floor, int(round(n * factor)))


@pytest.fixture
def rng():
    return RngStream(20240801)


@pytest.fixture
def gen(rng):
    return rng.generator()


def assert_close(actual, expected, atol=0.0, rtol=0.0, msg=""):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    tol = atol + rtol * np.abs(expected)
    err = np.abs(actual - expected)
    assert np.all(err <= tol), f"{msg} |err|={err.max()} tol={np.max(tol)}"
