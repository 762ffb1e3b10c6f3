"""
Feature pool service for ActiveFT selection
Loads, validates, normalizes and persists pools of unit feature vectors
"""

import io
import os
import struct
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from utils.errors import PoolFormatError, ValidationError

logger = logging.getLogger(__name__)

MAGIC = b"FPL1"
HEADER = struct.Struct("<4sII")
NORM_TOLERANCE = 1e-4
FORMATS = ("binary", "csv")


@dataclass(frozen=True)
class FeaturePool:
    """N unit-normalized C-dimensional float32 rows. Immutable once built."""

    features: np.ndarray

    def __post_init__(self):
        self.features.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    @classmethod
    def from_array(cls, matrix, normalize: bool = True) -> "FeaturePool":
        """Validate a raw matrix (optionally L2-normalizing rows first) and wrap it."""
        matrix = np.asarray(matrix)
        if matrix.ndim != 2:
            raise PoolFormatError(f"feature matrix must be 2-D, got shape {matrix.shape}")
        n, dim = matrix.shape
        if n < 1 or dim < 2:
            raise PoolFormatError(f"pool needs n >= 1 and dim >= 2, got n={n}, dim={dim}")
        matrix = matrix.astype(np.float64)
        if not np.all(np.isfinite(matrix)):
            bad = int(np.flatnonzero(~np.isfinite(matrix).all(axis=1))[0])
            raise PoolFormatError(f"row {bad} contains NaN or infinity")
        norms = np.linalg.norm(matrix, axis=1)
        if normalize:
            zero = np.flatnonzero(norms == 0.0)
            if zero.size:
                raise PoolFormatError(f"row {int(zero[0])} has zero norm and cannot be normalized")
            matrix = matrix / norms[:, None]
            features = matrix.astype(np.float32)
        else:
            off = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
            if off.size:
                i = int(off[0])
                raise PoolFormatError(f"row {i} has norm {norms[i]:.6f}, expected 1 within {NORM_TOLERANCE}")
            features = matrix.astype(np.float32)
        return cls(features=np.ascontiguousarray(features))

    def subset(self, indices) -> "FeaturePool":
        """Rows at the given indices as a new pool (used for per-iteration batches)."""
        return FeaturePool(features=np.ascontiguousarray(self.features[np.asarray(indices)]))

    def as_float64(self) -> np.ndarray:
        return self.features.astype(np.float64)


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian clusters on the unit sphere, a stand-in for encoder outputs."""

    n_clusters: int
    points_per_cluster: int
    dim: int
    spread: float
    seed: int = 0
    # Optional per-cluster sizes overriding points_per_cluster (imbalanced pools)
    cluster_sizes: Optional[Tuple[int, ...]] = None

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValidationError("n_clusters must be >= 1")
        if self.points_per_cluster < 1:
            raise ValidationError("points_per_cluster must be >= 1")
        if self.dim < 2:
            raise ValidationError("dim must be >= 2")
        if not self.spread > 0:
            raise ValidationError("spread must be > 0")
        if self.seed < 0:
            raise ValidationError("seed must be non-negative")
        if self.cluster_sizes is not None:
            if len(self.cluster_sizes) != self.n_clusters or min(self.cluster_sizes) < 1:
                raise ValidationError("cluster_sizes needs one positive size per cluster")

    def sizes(self) -> Tuple[int, ...]:
        if self.cluster_sizes is not None:
            return tuple(int(s) for s in self.cluster_sizes)
        return (self.points_per_cluster,) * self.n_clusters

    def labels(self) -> np.ndarray:
        """Cluster label of every generated row (rows are laid out cluster by cluster)."""
        return np.repeat(np.arange(self.n_clusters), self.sizes())


def _unit_rows(matrix: np.ndarray) -> np.ndarray:
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


def synthetic_centers(spec: SyntheticSpec) -> np.ndarray:
    """Replay the cluster-center draw of make_synthetic_pool."""
    rng = np.random.default_rng(spec.seed)
    return _unit_rows(rng.standard_normal((spec.n_clusters, spec.dim)))


def make_synthetic_pool(spec: SyntheticSpec) -> FeaturePool:
    """Perturb uniformly drawn sphere centers by isotropic Gaussian noise, then renormalize.

    spread is the angular standard deviation in radians: the per-coordinate noise is
    spread / sqrt(dim - 1) so the part tangent to the sphere has RMS norm spread.
    Pure function of spec: centers come first from the seeded generator, noise second.
    """
    rng = np.random.default_rng(spec.seed)
    centers = _unit_rows(rng.standard_normal((spec.n_clusters, spec.dim)))
    labels = spec.labels()
    noise = rng.standard_normal((labels.size, spec.dim)) * (spec.spread / np.sqrt(spec.dim - 1))
    points = centers[labels] + noise
    return FeaturePool.from_array(points, normalize=True)


def _infer_format(path: str, fmt: str) -> str:
    if fmt == "auto":
        return "csv" if str(path).lower().endswith(".csv") else "binary"
    if fmt not in FORMATS:
        raise ValidationError(f"unknown pool format {fmt!r}, expected one of {FORMATS}")
    return fmt


def _parse_binary(blob: bytes) -> np.ndarray:
    if len(blob) < HEADER.size:
        raise PoolFormatError(f"file too short for FPL1 header ({len(blob)} bytes)")
    magic, n, dim = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise PoolFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    payload = len(blob) - HEADER.size
    expected = n * dim * 4
    if payload != expected:
        raise PoolFormatError(
            f"header declares {n}x{dim} ({expected} payload bytes) but file holds {payload}")
    values = np.frombuffer(blob, dtype="<f4", count=n * dim, offset=HEADER.size)
    return values.reshape(n, dim).astype(np.float32)


def _parse_csv(blob: bytes) -> np.ndarray:
    try:
        text = blob.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise PoolFormatError(f"CSV pool is not valid UTF-8 text: {e}") from e
    rows = [line for line in text.splitlines() if line.strip()]
    if not rows:
        raise PoolFormatError("CSV pool is empty")
    try:
        matrix = np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise PoolFormatError(f"malformed CSV pool: {e}") from e
    return matrix


def load_pool(path: str, format: str = "auto", normalize: bool = False) -> FeaturePool:
    """Read a pool file (FPL1 binary or headerless CSV) and validate it."""
    fmt = _infer_format(path, format)
    if fmt == "binary":
        with open(path, "rb") as f:
            matrix = _parse_binary(f.read())
    else:
        with open(path, "rb") as f:
            matrix = _parse_csv(f.read())
    pool = FeaturePool.from_array(matrix, normalize=normalize)
    logger.info(f"Loaded {pool.n}x{pool.dim} pool from {path} ({fmt})")
    return pool


def save_pool(pool: FeaturePool, path: str, format: str = "auto") -> None:
    """Write a pool as FPL1 binary or CSV. Raises OSError when the destination is unwritable."""
    fmt = _infer_format(path, format)
    directory = os.path.dirname(str(path))
    if directory and not os.path.isdir(directory):
        raise FileNotFoundError(f"directory does not exist: {directory}")
    if fmt == "binary":
        with open(path, "wb") as f:
            f.write(HEADER.pack(MAGIC, pool.n, pool.dim))
            f.write(np.ascontiguousarray(pool.features, dtype="<f4").tobytes())
    else:
        # 9 significant digits round-trip any float32 exactly
        lines = [",".join(f"{v:.9g}" for v in row) for row in pool.features.tolist()]
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
    logger.info(f"Saved {pool.n}x{pool.dim} pool to {path} ({fmt})")

