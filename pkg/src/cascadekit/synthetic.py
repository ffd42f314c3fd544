"""Seeded Gaussian-blob classification data and its on-disk format.

Cluster centers sit on a ring of radius ``separation`` in the first two
feature dimensions (any further dimensions are pure noise), with unit
isotropic Gaussian noise around each center. With one cluster per class
the task is nearly linear and model capacity barely matters. With more,
each class owns several arcs of the ring in a fixed irregular
arrangement; small nets cannot carve the disconnected regions apart and
a capacity gap opens up between cheap and expensive models, which is
what a cascade benchmark needs.

All features are divided by sqrt(1 + separation^2 / 2), the mixture's
per-coordinate standard deviation on the ring dims, so inputs stay near
unit scale and one optimizer setting works across separations.

Feature files mirror the logit-table layout with x_* value columns::

    sample_id,label,x_0,...,x_{d-1}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from cascadekit.errors import ConfigError, FormatError
from cascadekit.util import atomic_write_text, fmt_float

_SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    dim: int = 2
    n_train: int = 3000
    n_val: int = 1500
    n_test: int = 1500
    separation: float = 5.0
    clusters_per_class: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.dim < 2:
            raise ConfigError("dim must be >= 2 (centers live on a ring in the first two dims)")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not math.isfinite(self.separation) or self.separation < 0:
            raise ConfigError("separation must be finite and non-negative")
        if self.clusters_per_class < 1:
            raise ConfigError("clusters_per_class must be >= 1")


@dataclass(frozen=True)
class FeatureTable:
    """Features and labels for one split."""

    sample_ids: tuple[str, ...]
    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        # copies, not views: locking a view would freeze the caller's array
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        if x.ndim != 2 or len(x) != len(self.sample_ids) or y.shape != (len(x),):
            raise ValueError("feature table arrays must align with sample ids")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "sample_ids", tuple(str(s) for s in self.sample_ids))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def num_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def dim(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SyntheticData:
    train: FeatureTable
    val: FeatureTable
    test: FeatureTable

    def split(self, name: str) -> FeatureTable:
        if name not in _SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


# seeds the fixed cluster-to-class arrangement; independent of the data
# seed on purpose so every replicate sees the same class geometry
_LAYOUT_SEED = 9


def feature_scale(separation: float) -> float:
    """Per-coordinate standard deviation of the ring mixture."""
    return math.sqrt(1.0 + separation * separation / 2.0)


def cluster_classes(num_classes: int, clusters_per_class: int) -> np.ndarray:
    """Class owning each ring position; every class owns exactly
    clusters_per_class positions, irregularly interleaved."""
    if clusters_per_class == 1:
        return np.arange(num_classes, dtype=np.int64)
    base = np.repeat(np.arange(num_classes, dtype=np.int64), clusters_per_class)
    return np.random.default_rng(_LAYOUT_SEED).permutation(base)


def blob_centers(
    num_classes: int, dim: int, separation: float, clusters_per_class: int = 1
) -> np.ndarray:
    """Ring of cluster centers, one row per cluster, in feature scale."""
    count = num_classes * clusters_per_class
    angles = 2.0 * np.pi * np.arange(count) / count
    centers = np.zeros((count, dim))
    radius = separation / feature_scale(separation)
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def gen_synthetic(spec: SyntheticSpec) -> SyntheticData:
    """Three disjoint splits drawn from the same blob mixture, seeded."""
    rng = np.random.default_rng(spec.seed)
    centers = blob_centers(spec.num_classes, spec.dim, spec.separation, spec.clusters_per_class)
    classes = cluster_classes(spec.num_classes, spec.clusters_per_class)
    sigma = 1.0 / feature_scale(spec.separation)
    splits = {}
    for name, n in zip(_SPLIT_NAMES, (spec.n_train, spec.n_val, spec.n_test)):
        cluster = rng.integers(0, len(centers), size=n)
        y = classes[cluster]
        x = centers[cluster] + sigma * rng.standard_normal((n, spec.dim))
        ids = tuple(f"{name}-{i:05d}" for i in range(n))
        splits[name] = FeatureTable(sample_ids=ids, x=x, y=y, num_classes=spec.num_classes)
    return SyntheticData(**splits)


def write_features(table: FeatureTable, path) -> None:
    header = "sample_id,label," + ",".join(f"x_{i}" for i in range(table.dim))
    lines = [header]
    for sid, label, row in zip(table.sample_ids, table.y, table.x):
        lines.append(f"{sid},{int(label)}," + ",".join(fmt_float(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_features(path, num_classes: int | None = None) -> FeatureTable:
    """Parse a feature CSV; infers the class count from labels if not given."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError:
        raise FormatError(f"feature file not found: {path}") from None
    if not lines:
        raise FormatError(f"{path}: empty file, expected a header row")
    header = lines[0].rstrip("\r").split(",")
    if len(header) < 3 or header[0] != "sample_id" or header[1] != "label":
        raise FormatError(f"{path}: malformed header {lines[0]!r}")
    expected = [f"x_{i}" for i in range(len(header) - 2)]
    if header[2:] != expected:
        raise FormatError(f"{path}: malformed header, value columns must be x_0..x_{len(header) - 3}")
    dim = len(header) - 2
    ids, labels, rows = [], [], []
    for row_no, line in enumerate(lines[1:], start=1):
        line = line.rstrip("\r")
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != dim + 2:
            raise FormatError(f"{path}: wrong column count, row {row_no}")
        try:
            labels.append(int(parts[1]))
            rows.append([float(v) for v in parts[2:]])
        except ValueError:
            raise FormatError(f"{path}: non-numeric value, row {row_no}") from None
        ids.append(parts[0])
    if not ids:
        raise FormatError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(y.max()) + 1
    return FeatureTable(
        sample_ids=tuple(ids),
        x=np.array(rows, dtype=np.float64),
        y=y,
        num_classes=num_classes,
    )


def spec_from_mapping(raw: dict) -> SyntheticSpec:
    """Build a SyntheticSpec from a config mapping with friendly key names."""
    allowed = {"classes", "dim", "train", "val", "test", "separation", "clusters", "seed"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown data keys: {sorted(unknown)}")
    base = SyntheticSpec()
    try:
        return replace(
            base,
            num_classes=int(raw.get("classes", base.num_classes)),
            dim=int(raw.get("dim", base.dim)),
            n_train=int(raw.get("train", base.n_train)),
            n_val=int(raw.get("val", base.n_val)),
            n_test=int(raw.get("test", base.n_test)),
            separation=float(raw.get("separation", base.separation)),
            clusters_per_class=int(raw.get("clusters", base.clusters_per_class)),
            seed=int(raw.get("seed", base.seed)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad data config: {exc}") from None
