"""Cost-aware confidence loss for training the cheap side of a cascade.

Per sample, with conf the cheap model's confidence and cost the charge
for invoking the later stage::

    loss = conf * [cheap wrong] + (1 - conf) * ([later wrong] + cost)

The wrongness indicators carry no gradient; confidence is the maximum
softmax probability and is the only differentiable input. The loss is
affine in conf, so each sample pushes confidence toward 0 or 1 at a
constant rate given by its correctness case. For cost in (0, 1) the only
case minimized at conf = 0 is "later stage right, cheap stage wrong",
which is exactly the set of samples worth handing off.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from cascadekit.confidence import softmax
from cascadekit.errors import CostSignWarning


@dataclass(frozen=True)
class CorrectnessPair:
    """Whether the cheap and the later stage classify a sample correctly."""

    fast_correct: bool
    exp_correct: bool

    @classmethod
    def from_logits(cls, label: int, fast_logits, exp_logits) -> "CorrectnessPair":
        fast = int(np.argmax(fast_logits))
        exp = int(np.argmax(exp_logits))
        return cls(fast_correct=fast == label, exp_correct=exp == label)


@dataclass(frozen=True)
class LossBreakdown:
    """Task loss, confidence loss, and their weighted total."""

    l_org: float
    l_casc: float
    weight: float
    total: float = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "total", self.l_org + self.weight * self.l_casc)


def _check_cost(cost: float) -> float:
    cost = float(cost)
    if not math.isfinite(cost) or cost < 0:
        raise ValueError("cost must be finite and non-negative")
    if cost > 1.0:
        warnings.warn(
            f"cost {cost} > 1 flips the sign of the only hand-off case; every "
            "sample will be pushed toward full confidence",
            CostSignWarning,
            stacklevel=3,
        )
    return cost


def cascade_loss_sample(conf: float, pair: CorrectnessPair, cost: float = 0.5) -> float:
    """Per-sample confidence loss."""
    cost = _check_cost(cost)
    if not 0.0 <= conf <= 1.0:
        raise ValueError("conf must lie in [0, 1]")
    fast_wrong = 0.0 if pair.fast_correct else 1.0
    exp_wrong = 0.0 if pair.exp_correct else 1.0
    return conf * fast_wrong + (1.0 - conf) * (exp_wrong + cost)


def cascade_loss_batch(confs, fast_correct, exp_correct, cost: float = 0.5) -> float:
    """Mean confidence loss over a batch."""
    cost = _check_cost(cost)
    confs = np.asarray(confs, dtype=np.float64)
    fw = 1.0 - np.asarray(fast_correct, dtype=np.float64)
    ew = 1.0 - np.asarray(exp_correct, dtype=np.float64)
    if not (len(confs) == len(fw) == len(ew)):
        raise ValueError("batch arrays must have equal length")
    if len(confs) == 0:
        raise ValueError("empty batch")
    return float(np.mean(confs * fw + (1.0 - confs) * (ew + cost)))


def cascade_loss_grad_conf(pair: CorrectnessPair, cost: float = 0.5) -> float:
    """Slope of the per-sample loss in conf: [cheap wrong] - ([later wrong] + cost)."""
    cost = _check_cost(cost)
    fast_wrong = 0.0 if pair.fast_correct else 1.0
    exp_wrong = 0.0 if pair.exp_correct else 1.0
    return fast_wrong - (exp_wrong + cost)


def grad_conf_batch(fast_correct, exp_correct, cost: float) -> np.ndarray:
    """Vectorized loss slope in conf; validation is the caller's job."""
    fw = 1.0 - np.asarray(fast_correct, dtype=np.float64)
    ew = 1.0 - np.asarray(exp_correct, dtype=np.float64)
    return fw - (ew + cost)


def grad_wrt_logits(fast_logits, pair: CorrectnessPair, cost: float = 0.5) -> np.ndarray:
    """Gradient of the per-sample loss in the cheap model's logits.

    Confidence is the max softmax probability with the argmax index held
    fixed, so the gradient is slope * p_m * (onehot(m) - p). Entries sum
    to zero like any softmax-backed gradient.
    """
    z = np.asarray(fast_logits, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("fast_logits must be a single logit vector")
    p = softmax(z)
    m = int(np.argmax(z))
    slope = cascade_loss_grad_conf(pair, cost)
    onehot = np.zeros_like(p)
    onehot[m] = 1.0
    return slope * p[m] * (onehot - p)


def joint_loss(l_org: float, l_casc: float, weight: float) -> LossBreakdown:
    """Combine task and confidence losses: total = l_org + weight * l_casc."""
    if not math.isfinite(weight) or weight < 0:
        raise ValueError("weight must be finite and non-negative")
    return LossBreakdown(l_org=float(l_org), l_casc=float(l_casc), weight=float(weight))


@dataclass(frozen=True)
class TrainStep:
    """One entry of a stage-by-stage training plan (stages are 0-based)."""

    stage: int
    loss_kind: str
    expensive_stage: int | None = None


def cascading_schedule(num_stages: int) -> tuple[TrainStep, ...]:
    """Training order for separate-model cascades.

    The last stage trains on the task loss alone; every earlier stage
    then trains, deepest first, on the joint loss against its already
    frozen immediate successor.
    """
    num_stages = int(num_stages)
    if num_stages < 2:
        raise ValueError("a cascade needs at least 2 stages")
    steps = [TrainStep(stage=num_stages - 1, loss_kind="org_only")]
    for m in range(num_stages - 2, -1, -1):
        steps.append(TrainStep(stage=m, loss_kind="joint", expensive_stage=m + 1))
    return tuple(steps)


def splitting_loss(l_org_per_exit, l_casc_per_pair, weight: float) -> float:
    """Total loss of a multi-exit network trained in one pass.

    Every exit contributes its task loss; every adjacent exit pair
    contributes a weighted confidence loss. With weight 0 this is plain
    multi-exit training, the sum of per-exit task losses.
    """
    if not math.isfinite(weight) or weight < 0:
        raise ValueError("weight must be finite and non-negative")
    l_org = [float(v) for v in l_org_per_exit]
    l_casc = [float(v) for v in l_casc_per_pair]
    if len(l_org) < 2:
        raise ValueError("a multi-exit network needs at least 2 exits")
    if len(l_casc) != len(l_org) - 1:
        raise ValueError(f"expected {len(l_org) - 1} pair losses, got {len(l_casc)}")
    return sum(l_org) + weight * sum(l_casc)
