from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from calibra.data import Attribute, Dataset

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def data_dir():
    return DATA_DIR


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(X, y, kinds=None, classes=("neg", "pos"), name="synthetic"):
    """Dataset from a float matrix; ``kinds[k]`` is None (numeric) or a value tuple."""
    X = np.asarray(X, dtype=float)
    if kinds is None:
        kinds = [None] * X.shape[1]
    attrs = tuple(Attribute(f"x{k + 1}", v) for k, v in enumerate(kinds))
    return Dataset(attrs, X, np.asarray(y), tuple(classes), name)


def two_region_data(n, rng, flip=0.1):
    """Labels set by region of the unit square, with a fraction flipped."""
    A = rng.random((n, 2))
    base = (A[:, 0] < 0.5) ^ (A[:, 1] < 0.3)
    p = np.where(base, 1.0 - flip, flip)
    return A, (rng.random(n) < p).astype(np.int64)
