import os
import sys

import numpy as np
import pytest

# Tests import the top-level packages directly
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import Config
from services.feature_store import FeaturePool, SyntheticSpec, make_synthetic_pool


@pytest.fixture(autouse=True)
def audit_log_in_tmp(tmp_path, monkeypatch):
    """Keep the CLI audit trail out of the working tree."""
    monkeypatch.setattr(Config, "AUDIT_LOG_PATH", str(tmp_path / "audit.log"))
    monkeypatch.setattr(Config, "FERNET_KEY", None)
    monkeypatch.setattr(Config, "THREADS", 1)


def random_pool(n: int, dim: int, seed: int) -> FeaturePool:
    rng = np.random.default_rng(seed)
    return FeaturePool.from_array(rng.standard_normal((n, dim)), normalize=True)


def antipodal_pool(per_cluster: int = 10, dim: int = 8, noise: float = 0.01, seed: int = 0) -> FeaturePool:
    """Two tight clusters around e_1 and -e_1; first half belongs to +e_1."""
    rng = np.random.default_rng(seed)
    center = np.zeros(dim)
    center[0] = 1.0
    rows = np.vstack([center + noise * rng.standard_normal((per_cluster, dim)),
                      -center + noise * rng.standard_normal((per_cluster, dim))])
    return FeaturePool.from_array(rows, normalize=True)


@pytest.fixture
def three_cluster_spec() -> SyntheticSpec:
    return SyntheticSpec(n_clusters=3, points_per_cluster=10, dim=16, spread=0.05, seed=7)


@pytest.fixture
def three_cluster_pool(three_cluster_spec) -> FeaturePool:
    return make_synthetic_pool(three_cluster_spec)
