"""Shared builders for the test suite.

The golden two-stage fixture is four samples with hand-picked
confidences and correctness, small enough to sweep by hand:

    conf (stage 0)   0.55  0.65  0.75  0.85
    stage 0 correct     1     1     0     1
    stage 1 correct     1     0     1     1
"""

import math

import numpy as np
import pytest

from cascadekit.data import LogitTable


def two_class_logits(conf: float, pred: int) -> list[float]:
    """Logit pair whose softmax max probability equals conf at argmax pred."""
    gap = math.log(conf / (1.0 - conf))
    pair = [gap / 2.0, -gap / 2.0]
    return pair if pred == 0 else pair[::-1]


def make_table(model_id, labels, rows, sample_ids=None):
    labels = np.asarray(labels, dtype=np.int64)
    logits = np.asarray(rows, dtype=np.float64)
    if sample_ids is None:
        sample_ids = [f"s{i}" for i in range(len(labels))]
    return LogitTable(
        model_id=model_id,
        num_classes=logits.shape[1],
        sample_ids=tuple(sample_ids),
        labels=labels,
        logits=logits,
    )


GOLDEN_CONFS = (0.55, 0.65, 0.75, 0.85)
GOLDEN_LABELS = (0, 0, 1, 1)
GOLDEN_FAST_PREDS = (0, 0, 0, 1)
GOLDEN_EXP_PREDS = (0, 1, 1, 1)
GOLDEN_MACS = (10.0, 90.0)


@pytest.fixture()
def golden_pair():
    fast = make_table(
        "fast",
        GOLDEN_LABELS,
        [two_class_logits(c, p) for c, p in zip(GOLDEN_CONFS, GOLDEN_FAST_PREDS)],
    )
    exp = make_table(
        "exp",
        GOLDEN_LABELS,
        [[2.0, 0.0] if p == 0 else [0.0, 2.0] for p in GOLDEN_EXP_PREDS],
    )
    return fast, exp


def random_table(rng, model_id, n, k, labels=None):
    if labels is None:
        labels = rng.integers(0, k, size=n)
    return LogitTable(
        model_id=model_id,
        num_classes=k,
        sample_ids=tuple(f"s{i}" for i in range(n)),
        labels=np.asarray(labels, dtype=np.int64),
        logits=rng.normal(0.0, 2.0, size=(n, k)),
    )
