"""Minibatch SGD with momentum, step-decayed learning rate, and the
choice between plain task training and joint cascade-aware training.

Determinism contract: for a fixed starting net, data, and TrainConfig the
trained parameters are bit-reproducible. The only randomness is the
shuffle stream seeded by TrainConfig.seed. The cascade loss enters the
update as task_grad + weight * confidence_grad, so weight 0 reproduces
plain training exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from cascadekit.errors import CostSignWarning
from cascadekit.nets import ToyNet, forward, loss_and_grads, net_fingerprint, params_of, rebuild
from cascadekit.util import array_fingerprint


@dataclass(frozen=True)
class LossSpec:
    """What to optimize: the task loss alone or jointly with the
    confidence loss at a given weight and hand-off cost."""

    kind: str = "org_only"
    weight: float = 0.0
    cost: float = 0.5

    def __post_init__(self):
        if self.kind not in ("org_only", "cascade"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not math.isfinite(self.weight) or self.weight < 0:
            raise ValueError("weight must be finite and non-negative")
        if not math.isfinite(self.cost) or self.cost < 0:
            raise ValueError("cost must be finite and non-negative")
        if self.cost > 1.0:
            warnings.warn(
                f"cost {self.cost} > 1 pushes every sample toward full confidence",
                CostSignWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr: float = 0.1
    lr_decay: float = 0.2
    decay_epochs: tuple[int, ...] = (25, 35)
    momentum: float = 0.9
    weight_decay: float = 0.0005
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not 0 < self.lr < math.inf:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Step decay: the base rate times lr_decay per passed boundary."""
    drops = sum(1 for boundary in config.decay_epochs if epoch >= boundary)
    return config.lr * config.lr_decay**drops


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    loss_total: float
    loss_org: float
    loss_casc: float


def train(
    net: ToyNet,
    x: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    loss: LossSpec = LossSpec(),
    exp_correct: np.ndarray | None = None,
) -> tuple[ToyNet, list[EpochStats]]:
    """SGD-train a net; returns the trained net and per-epoch loss means.

    exp_correct gives the frozen correctness of the later stage per
    training sample and is required exactly when loss.kind is "cascade"
    on a single-exit net.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    if n == 0 or x.shape[0] != n:
        raise ValueError("training data must be non-empty and aligned")
    if loss.kind == "cascade" and net.num_exits == 1:
        if exp_correct is None:
            raise ValueError("cascade loss on a single-exit net needs exp_correct")
        exp_correct = np.asarray(exp_correct, dtype=bool)
        if exp_correct.shape != (n,):
            raise ValueError("exp_correct must align with the training samples")

    rng = np.random.default_rng(config.seed)
    params = params_of(net)
    velocity = [np.zeros_like(p) for p in params]
    history: list[EpochStats] = []
    for epoch in range(config.epochs):
        lr = learning_rate(config, epoch)
        perm = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            current = rebuild(net, params)
            batch_exp = exp_correct[idx] if exp_correct is not None else None
            breakdown, grads = loss_and_grads(current, x[idx], y[idx], loss, batch_exp)
            for p, v, g in zip(params, velocity, grads):
                g = g + config.weight_decay * p
                v *= config.momentum
                v += g
                p -= lr * v
            sums += len(idx) * np.array([breakdown.total, breakdown.l_org, breakdown.l_casc])
        history.append(
            EpochStats(
                epoch=epoch,
                lr=lr,
                loss_total=float(sums[0] / n),
                loss_org=float(sums[1] / n),
                loss_casc=float(sums[2] / n),
            )
        )
    return rebuild(net, params), history


def accuracy(net: ToyNet, x: np.ndarray, y: np.ndarray, exit_index: int = -1) -> float:
    logits = forward(net, x)[exit_index]
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))


class CorrectnessCache:
    """Per-run cache of a frozen stage's correctness on a dataset.

    Keyed by the stage net's parameter fingerprint and the dataset's
    content fingerprint, so a retrained stage or different split never
    reuses a stale entry.
    """

    def __init__(self):
        self._store: dict[tuple[str, str], np.ndarray] = {}
        self.hits = 0
        self.misses = 0

    def correctness(self, net: ToyNet, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        key = (net_fingerprint(net), array_fingerprint(np.asarray(x), np.asarray(y)))
        if key in self._store:
            self.hits += 1
            return self._store[key]
        self.misses += 1
        logits = forward(net, np.asarray(x, dtype=np.float64))[-1]
        correct = np.argmax(logits, axis=1) == np.asarray(y)
        correct.flags.writeable = False
        self._store[key] = correct
        return correct
