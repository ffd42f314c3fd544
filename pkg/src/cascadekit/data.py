"""Domain types and the columnar logit-table file format.

A logit table holds one model's raw class scores for every sample of one
split. Scores from different models over the same split live in separate
files and are joined on sample_id before any cascade metric is computed;
a join with missing or extra ids is an error rather than a silent
intersection, because misaligned rows are the classic way cascade numbers
go quietly wrong.

File format (UTF-8, LF newlines)::

    sample_id,label,logit_0,...,logit_{K-1}
    a-0001,2,0.25,-1.5,3.0

Floats are serialized with the shortest representation that round-trips
to the exact stored value, so writing a loaded canonical file reproduces
it byte for byte.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from cascadekit.errors import ConfigError, CostSignWarning, FormatError, JoinError
from cascadekit.util import atomic_write_text, fmt_float, read_yaml

SCORING_METHODS = ("max_prob", "neg_entropy")
POLICIES = ("max_accuracy", "constrained_min_cost")

_ID_FORBIDDEN = (",", "\n", "\r")


def _check_sample_ids(sample_ids: Sequence[str]) -> None:
    seen = set()
    for sid in sample_ids:
        if not sid:
            raise ValueError("sample ids must be non-empty")
        if any(ch in sid for ch in _ID_FORBIDDEN):
            raise ValueError(f"sample id {sid!r} contains a comma or newline")
        if sid in seen:
            raise ValueError(f"duplicate sample id {sid!r}")
        seen.add(sid)


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class LogitTable:
    """One model's logits over one split, aligned row by row with labels."""

    model_id: str
    num_classes: int
    sample_ids: tuple[str, ...]
    labels: np.ndarray
    logits: np.ndarray

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        ids = tuple(str(s) for s in self.sample_ids)
        _check_sample_ids(ids)
        labels = _frozen_array(self.labels, np.int64)
        logits = _frozen_array(self.logits, np.float64)
        n = len(ids)
        if labels.shape != (n,):
            raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
        if logits.shape != (n, self.num_classes):
            raise ValueError(
                f"logits must have shape ({n}, {self.num_classes}), got {logits.shape}"
            )
        if n and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        object.__setattr__(self, "sample_ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "logits", logits)

    @property
    def num_samples(self) -> int:
        return len(self.sample_ids)

    @property
    def predictions(self) -> np.ndarray:
        """Argmax class per row; ties resolve to the lowest index."""
        return np.argmax(self.logits, axis=1)

    def with_logits(self, logits: np.ndarray, model_id: str | None = None) -> "LogitTable":
        return LogitTable(
            model_id=self.model_id if model_id is None else model_id,
            num_classes=self.num_classes,
            sample_ids=self.sample_ids,
            labels=self.labels,
            logits=logits,
        )


def load_logit_table(path, model_id: str | None = None) -> LogitTable:
    """Parse a logit CSV; errors carry the 1-based data row number."""
    from pathlib import Path

    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FormatError(f"logit file not found: {path}") from None
    lines = text.splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file, expected a header row")
    header = lines[0].rstrip("\r").split(",")
    if len(header) < 3 or header[0] != "sample_id" or header[1] != "label":
        raise FormatError(f"{path}: malformed header {lines[0]!r}")
    expected = [f"logit_{i}" for i in range(len(header) - 2)]
    if header[2:] != expected:
        raise FormatError(f"{path}: malformed header, logit columns must be logit_0..logit_{len(header) - 3}")
    k = len(header) - 2

    ids: list[str] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    for row_no, line in enumerate(lines[1:], start=1):
        line = line.rstrip("\r")
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != k + 2:
            raise FormatError(f"{path}: wrong column count, row {row_no}")
        sid = parts[0]
        if not sid:
            raise FormatError(f"{path}: empty sample_id, row {row_no}")
        if sid in seen:
            raise FormatError(f"{path}: duplicate sample_id {sid!r}, row {row_no}")
        seen.add(sid)
        try:
            label = int(parts[1])
        except ValueError:
            raise FormatError(f"{path}: non-integer label, row {row_no}") from None
        if not 0 <= label < k:
            raise FormatError(f"{path}: label out of range, row {row_no}")
        try:
            values = [float(v) for v in parts[2:]]
        except ValueError:
            raise FormatError(f"{path}: non-numeric logit, row {row_no}") from None
        if not all(math.isfinite(v) for v in values):
            raise FormatError(f"{path}: non-finite logit, row {row_no}")
        ids.append(sid)
        labels.append(label)
        rows.append(values)

    logits = np.array(rows, dtype=np.float64).reshape(len(ids), k)
    return LogitTable(
        model_id=path.stem if model_id is None else model_id,
        num_classes=k,
        sample_ids=tuple(ids),
        labels=np.array(labels, dtype=np.int64),
        logits=logits,
    )


def write_logit_table(table: LogitTable, path) -> None:
    header = "sample_id,label," + ",".join(f"logit_{i}" for i in range(table.num_classes))
    lines = [header]
    for sid, label, row in zip(table.sample_ids, table.labels, table.logits):
        lines.append(f"{sid},{int(label)}," + ",".join(fmt_float(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def join_tables(tables: Sequence[LogitTable]) -> tuple[LogitTable, ...]:
    """Align tables over the same split to the first table's row order.

    Raises JoinError when sample ids do not match exactly, when labels
    disagree for a shared id, or when class counts differ.
    """
    if not tables:
        raise ValueError("join_tables needs at least one table")
    first = tables[0]
    out = [first]
    first_ids = set(first.sample_ids)
    for other in tables[1:]:
        if other.num_classes != first.num_classes:
            raise JoinError(
                f"{other.model_id}: num_classes {other.num_classes} != {first.num_classes}"
            )
        other_ids = set(other.sample_ids)
        if other_ids != first_ids:
            missing = sorted(first_ids - other_ids)[:3]
            extra = sorted(other_ids - first_ids)[:3]
            detail = []
            if missing:
                detail.append(f"missing ids {missing}")
            if extra:
                detail.append(f"extra ids {extra}")
            raise JoinError(f"{other.model_id}: sample ids do not match ({'; '.join(detail)})")
        pos = {sid: i for i, sid in enumerate(other.sample_ids)}
        perm = np.array([pos[sid] for sid in first.sample_ids], dtype=np.intp)
        aligned = LogitTable(
            model_id=other.model_id,
            num_classes=other.num_classes,
            sample_ids=first.sample_ids,
            labels=other.labels[perm],
            logits=other.logits[perm],
        )
        if not np.array_equal(aligned.labels, first.labels):
            bad = int(np.nonzero(aligned.labels != first.labels)[0][0])
            raise JoinError(
                f"{other.model_id}: label mismatch for sample {first.sample_ids[bad]!r}"
            )
        out.append(aligned)
    return tuple(out)


@dataclass(frozen=True)
class ModelProfile:
    """Identity, per-sample cost, and optional standalone accuracy of a model."""

    model_id: str
    macs: float
    standalone_accuracy: float | None = None

    def __post_init__(self):
        if not self.model_id:
            raise ValueError("model_id must be non-empty")
        if not math.isfinite(self.macs) or self.macs < 0:
            raise ValueError("macs must be finite and non-negative")
        if self.standalone_accuracy is not None and not 0.0 <= self.standalone_accuracy <= 1.0:
            raise ValueError("standalone_accuracy must lie in [0, 1]")


@dataclass(frozen=True)
class StageSpec:
    """One cascade stage: a profile, where its logits come from, and how its cost accrues.

    cumulative=True means the stage's macs figure already includes all
    computation shared with earlier stages (multi-exit networks), so a
    sample leaving here is charged this figure alone.
    """

    profile: ModelProfile
    logit_source: str = ""
    cumulative: bool = False


@dataclass(frozen=True)
class CascadeSpec:
    """Full description of a cascade evaluation or training setup."""

    stages: tuple[StageSpec, ...]
    thresholds: tuple[float, ...] | None = None
    cost: float = 0.5
    weight: float = 0.0
    epsilon: float = 0.0
    scoring: str = "max_prob"
    policy: str = "max_accuracy"
    seed: int = 0

    def __post_init__(self):
        stages = tuple(self.stages)
        if len(stages) < 2:
            raise ConfigError("a cascade needs at least 2 stages")
        object.__setattr__(self, "stages", stages)
        if self.thresholds is not None:
            thresholds = tuple(float(t) for t in self.thresholds)
            if len(thresholds) != len(stages) - 1:
                raise ConfigError(
                    f"threshold count mismatch: expected {len(stages) - 1}, got {len(thresholds)}"
                )
            for t in thresholds:
                if not 0.0 <= t <= 1.0:
                    raise ConfigError(f"threshold {t} outside [0, 1]")
            object.__setattr__(self, "thresholds", thresholds)
        if not math.isfinite(self.cost) or self.cost < 0:
            raise ConfigError("cost must be finite and non-negative")
        if self.cost > 1.0:
            warnings.warn(
                f"cost {self.cost} > 1 rewards high confidence even when only the "
                "later stage is correct; nothing will be pushed toward hand-off",
                CostSignWarning,
                stacklevel=2,
            )
        if not math.isfinite(self.weight) or self.weight < 0:
            raise ConfigError("weight must be finite and non-negative")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if self.scoring not in SCORING_METHODS:
            raise ConfigError(f"unknown scoring method {self.scoring!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown threshold policy {self.policy!r}")

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    @property
    def stage_macs(self) -> tuple[float, ...]:
        return tuple(s.profile.macs for s in self.stages)

    @property
    def cumulative_flags(self) -> tuple[bool, ...]:
        return tuple(s.cumulative for s in self.stages)


_SPEC_KEYS = {"stages", "thresholds", "cost", "weight", "epsilon", "scoring", "policy", "seed"}
_STAGE_KEYS = {"model", "macs", "accuracy", "logits", "cumulative"}


def validate_spec(raw: Mapping) -> CascadeSpec:
    """Validate a raw config mapping and build a CascadeSpec.

    Defaults: cost 0.5, weight 0, epsilon 0, max_prob scoring, the
    max-accuracy threshold policy, seed 0.
    """
    if not isinstance(raw, Mapping):
        raise ConfigError("cascade config must be a mapping")
    unknown = set(raw) - _SPEC_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    stages_raw = raw.get("stages")
    if not isinstance(stages_raw, Sequence) or isinstance(stages_raw, (str, bytes)):
        raise ConfigError("config must list stages")
    if len(stages_raw) < 2:
        raise ConfigError("a cascade needs at least 2 stages")
    stages = []
    for i, entry in enumerate(stages_raw):
        if not isinstance(entry, Mapping):
            raise ConfigError(f"stage {i}: must be a mapping")
        unknown = set(entry) - _STAGE_KEYS
        if unknown:
            raise ConfigError(f"stage {i}: unknown keys {sorted(unknown)}")
        for key in ("model", "macs", "logits"):
            if key not in entry:
                raise ConfigError(f"stage {i}: missing required key {key!r}")
        try:
            profile = ModelProfile(
                model_id=str(entry["model"]),
                macs=float(entry["macs"]),
                standalone_accuracy=(
                    float(entry["accuracy"]) if entry.get("accuracy") is not None else None
                ),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"stage {i}: {exc}") from None
        stages.append(
            StageSpec(
                profile=profile,
                logit_source=str(entry["logits"]),
                cumulative=bool(entry.get("cumulative", False)),
            )
        )
    thresholds = raw.get("thresholds")
    if thresholds is not None:
        if not isinstance(thresholds, Sequence) or isinstance(thresholds, (str, bytes)):
            raise ConfigError("thresholds must be a list of reals")
        thresholds = tuple(float(t) for t in thresholds)
    try:
        return CascadeSpec(
            stages=tuple(stages),
            thresholds=thresholds,
            cost=float(raw.get("cost", 0.5)),
            weight=float(raw.get("weight", 0.0)),
            epsilon=float(raw.get("epsilon", 0.0)),
            scoring=str(raw.get("scoring", "max_prob")),
            policy=str(raw.get("policy", "max_accuracy")),
            seed=int(raw.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_cascade_config(path) -> CascadeSpec:
    return validate_spec(read_yaml(path))
