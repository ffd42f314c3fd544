"""Cascade routing, metrics, exact threshold sweeps, and selection.

Tie semantics: a sample whose confidence equals the threshold is handed
to the next stage. A threshold of 1 therefore routes every sample onward
and any threshold below the split's minimum confidence routes none.

Since routing only changes when the threshold crosses an observed
confidence value, every metric is piecewise constant in the threshold and
an exact sweep needs only the sorted unique confidences plus a sentinel
below the minimum and the point 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cascadekit.confidence import confidences
from cascadekit.data import CascadeSpec, LogitTable, join_tables
from cascadekit.errors import FormatError
from cascadekit.util import atomic_write_text, fmt_float


def n_expensive(confs: np.ndarray, delta: float) -> int:
    """Number of samples routed onward: confidence <= delta."""
    confs = np.asarray(confs, dtype=np.float64)
    return int(np.count_nonzero(confs <= delta))


def cascade_accuracy(
    labels: np.ndarray,
    fast_preds: np.ndarray,
    exp_preds: np.ndarray,
    confs: np.ndarray,
    delta: float,
) -> float:
    """Two-stage cascade accuracy at a fixed threshold."""
    labels = np.asarray(labels)
    fast_preds = np.asarray(fast_preds)
    exp_preds = np.asarray(exp_preds)
    confs = np.asarray(confs, dtype=np.float64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty split")
    if not (len(fast_preds) == len(exp_preds) == len(confs) == n):
        raise ValueError("labels, predictions, and confidences must have equal length")
    keep = confs > delta
    chosen = np.where(keep, fast_preds, exp_preds)
    return float(np.mean(chosen == labels))


def stage_exit_costs(stage_macs, cumulative=None) -> np.ndarray:
    """Per-sample cost of exiting at each stage.

    A non-cumulative stage bills its macs to every sample that reaches
    it; a cumulative stage's macs figure already contains the shared
    computation, so it is billed only at the stage where the sample
    actually exits.
    """
    macs = np.asarray(stage_macs, dtype=np.float64)
    if macs.ndim != 1 or len(macs) < 1:
        raise ValueError("stage_macs must be a non-empty 1-d sequence")
    if np.any(macs < 0) or not np.all(np.isfinite(macs)):
        raise ValueError("stage macs must be finite and non-negative")
    if cumulative is None:
        cumulative = [False] * len(macs)
    cumulative = [bool(c) for c in cumulative]
    if len(cumulative) != len(macs):
        raise ValueError("cumulative flags must match stage count")
    costs = np.empty(len(macs), dtype=np.float64)
    running = 0.0
    for m in range(len(macs)):
        costs[m] = running + macs[m]
        if not cumulative[m]:
            running += macs[m]
    return costs


def cascade_macs(stage_macs, exit_counts, cumulative=None) -> float:
    """Expected per-sample cost given how many samples exit at each stage."""
    counts = np.asarray(exit_counts, dtype=np.int64)
    costs = stage_exit_costs(stage_macs, cumulative)
    if counts.shape != costs.shape:
        raise ValueError("exit_counts must match stage count")
    if np.any(counts < 0):
        raise ValueError("exit counts must be non-negative")
    n = int(counts.sum())
    if n == 0:
        raise ValueError("exit counts sum to zero")
    return float(np.dot(counts / n, costs))


@dataclass(frozen=True)
class SweepCurve:
    """Metrics of a two-stage cascade at every distinct threshold."""

    delta: np.ndarray
    acc_casc: np.ndarray
    n_exp: np.ndarray
    macs_casc: np.ndarray

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=np.float64)
        acc = np.asarray(self.acc_casc, dtype=np.float64)
        n_exp = np.asarray(self.n_exp, dtype=np.int64)
        macs = np.asarray(self.macs_casc, dtype=np.float64)
        if not (len(delta) == len(acc) == len(n_exp) == len(macs)) or len(delta) == 0:
            raise ValueError("curve columns must be non-empty and equally long")
        if np.any(np.diff(delta) <= 0):
            raise ValueError("curve thresholds must be strictly increasing")
        if np.any(np.diff(n_exp) < 0):
            raise ValueError("routed counts must be non-decreasing along the curve")
        for arr in (delta, acc, n_exp, macs):
            arr.flags.writeable = False
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "acc_casc", acc)
        object.__setattr__(self, "n_exp", n_exp)
        object.__setattr__(self, "macs_casc", macs)

    def __len__(self) -> int:
        return len(self.delta)

    def to_csv(self, path) -> None:
        lines = ["delta,acc_casc,n_exp,macs_casc"]
        for d, a, n, m in zip(self.delta, self.acc_casc, self.n_exp, self.macs_casc):
            lines.append(f"{fmt_float(d)},{fmt_float(a)},{int(n)},{fmt_float(m)}")
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "SweepCurve":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            raise FormatError(f"curve file not found: {path}") from None
        if not lines or lines[0].rstrip("\r") != "delta,acc_casc,n_exp,macs_casc":
            raise FormatError(f"{path}: malformed curve header")
        cols: list[list[float]] = [[], [], [], []]
        for row_no, line in enumerate(lines[1:], start=1):
            line = line.rstrip("\r")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise FormatError(f"{path}: wrong column count, row {row_no}")
            try:
                values = [float(v) for v in parts]
            except ValueError:
                raise FormatError(f"{path}: non-numeric value, row {row_no}") from None
            for col, v in zip(cols, values):
                col.append(v)
        if not cols[0]:
            raise FormatError(f"{path}: curve has no rows")
        return cls(
            delta=np.array(cols[0]),
            acc_casc=np.array(cols[1]),
            n_exp=np.array(cols[2], dtype=np.int64),
            macs_casc=np.array(cols[3]),
        )


def _exact_sweep(confs, fast_correct, exp_correct, stage_macs, cumulative):
    """Candidate thresholds and metrics via prefix sums over sorted confidences."""
    n = len(confs)
    order = np.argsort(confs, kind="stable")
    sc = confs[order]
    routed_correct = np.concatenate([[0], np.cumsum(exp_correct[order])])
    kept_correct = np.concatenate([[0], np.cumsum(fast_correct[order])])
    total_fast = kept_correct[-1]

    uniq = np.unique(sc)
    deltas = [uniq[0] - 1.0]
    counts = [0]
    routed = np.searchsorted(sc, uniq, side="right")
    deltas.extend(uniq.tolist())
    counts.extend(routed.tolist())
    if uniq[-1] != 1.0:
        deltas.append(1.0)
        counts.append(n)
    counts_arr = np.asarray(counts, dtype=np.int64)
    acc = (routed_correct[counts_arr] + total_fast - kept_correct[counts_arr]) / n
    costs = stage_exit_costs(stage_macs, cumulative)
    macs = ((n - counts_arr) * costs[0] + counts_arr * costs[1]) / n
    return np.asarray(deltas), acc, counts_arr, macs


def sweep_thresholds(fast: LogitTable, exp: LogitTable, spec: CascadeSpec) -> SweepCurve:
    """Exact threshold sweep of a two-stage cascade on a validation split."""
    if spec.num_stages != 2:
        raise ValueError("sweep_thresholds handles two-stage cascades; use search_multistage_thresholds")
    fast, exp = join_tables([fast, exp])
    if fast.num_samples == 0:
        raise ValueError("empty validation split")
    confs = confidences(fast, spec.scoring)
    fast_correct = (fast.predictions == fast.labels).astype(np.int64)
    exp_correct = (exp.predictions == exp.labels).astype(np.int64)
    deltas, acc, counts, macs = _exact_sweep(
        confs, fast_correct, exp_correct, spec.stage_macs, spec.cumulative_flags
    )
    return SweepCurve(delta=deltas, acc_casc=acc, n_exp=counts, macs_casc=macs)


@dataclass(frozen=True)
class Selection:
    """A chosen operating point on a sweep curve."""

    delta: float
    index: int
    acc_casc: float
    n_exp: int
    macs_casc: float
    policy: str
    feasible: bool


def _argbest(rows) -> int:
    """Index of the lexicographically smallest key tuple."""
    best = min(range(len(rows)), key=lambda i: rows[i])
    return best


def select_threshold(
    curve: SweepCurve,
    policy: str = "max_accuracy",
    epsilon: float = 0.0,
    expensive_accuracy: float | None = None,
) -> Selection:
    """Pick a threshold from a sweep curve.

    max_accuracy: highest accuracy; ties prefer fewer routed samples,
    then the smaller threshold.

    constrained_min_cost: fewest routed samples whose accuracy is at
    least (1 - epsilon) times the expensive model's accuracy on the same
    split; infeasible constraints fall back to max_accuracy and the
    result is flagged rather than raising.
    """
    if policy == "max_accuracy":
        keys = [
            (-curve.acc_casc[i], int(curve.n_exp[i]), curve.delta[i])
            for i in range(len(curve))
        ]
        i = _argbest(keys)
        return Selection(
            delta=float(curve.delta[i]),
            index=i,
            acc_casc=float(curve.acc_casc[i]),
            n_exp=int(curve.n_exp[i]),
            macs_casc=float(curve.macs_casc[i]),
            policy=policy,
            feasible=True,
        )
    if policy == "constrained_min_cost":
        if expensive_accuracy is None:
            raise ValueError("constrained_min_cost needs the expensive model's accuracy")
        floor = (1.0 - epsilon) * expensive_accuracy
        feasible = [i for i in range(len(curve)) if curve.acc_casc[i] >= floor]
        if not feasible:
            fallback = select_threshold(curve, "max_accuracy")
            return Selection(
                delta=fallback.delta,
                index=fallback.index,
                acc_casc=fallback.acc_casc,
                n_exp=fallback.n_exp,
                macs_casc=fallback.macs_casc,
                policy=policy,
                feasible=False,
            )
        keys = {i: (int(curve.n_exp[i]), -curve.acc_casc[i], curve.delta[i]) for i in feasible}
        i = min(feasible, key=keys.get)
        return Selection(
            delta=float(curve.delta[i]),
            index=i,
            acc_casc=float(curve.acc_casc[i]),
            n_exp=int(curve.n_exp[i]),
            macs_casc=float(curve.macs_casc[i]),
            policy=policy,
            feasible=True,
        )
    raise ValueError(f"unknown threshold policy {policy!r}")


@dataclass(frozen=True)
class RoutingResult:
    """Outcome of routing a split through a cascade at fixed thresholds."""

    exit_stages: np.ndarray
    exit_counts: tuple[int, ...]
    acc_casc: float
    macs_casc: float
    sample_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        exits = np.asarray(self.exit_stages, dtype=np.int64)
        exits.flags.writeable = False
        object.__setattr__(self, "exit_stages", exits)
        counts = tuple(int(c) for c in self.exit_counts)
        object.__setattr__(self, "exit_counts", counts)
        if sum(counts) != len(exits):
            raise ValueError("exit counts must partition the split")
        if self.sample_ids is not None and len(self.sample_ids) != len(exits):
            raise ValueError("sample_ids must match the split length")

    @property
    def per_sample_exit(self) -> dict[str, int]:
        if self.sample_ids is None:
            raise ValueError("routing was computed without sample ids")
        return {sid: int(m) for sid, m in zip(self.sample_ids, self.exit_stages)}


def route_multistage(
    stage_confs,
    stage_preds,
    labels,
    deltas,
    stage_macs,
    cumulative=None,
    sample_ids=None,
) -> RoutingResult:
    """Route a split through M stages: exit at the first stage whose
    confidence clears its threshold, else at the last stage."""
    preds = [np.asarray(p) for p in stage_preds]
    m_stages = len(preds)
    if m_stages < 2:
        raise ValueError("routing needs at least 2 stages")
    confs = [np.asarray(c, dtype=np.float64) for c in stage_confs]
    if len(confs) != m_stages - 1:
        raise ValueError(f"expected {m_stages - 1} confidence arrays, got {len(confs)}")
    deltas = [float(d) for d in deltas]
    if len(deltas) != m_stages - 1:
        raise ValueError(f"expected {m_stages - 1} thresholds, got {len(deltas)}")
    labels = np.asarray(labels)
    n = len(labels)
    if n == 0:
        raise ValueError("empty split")
    for arr in confs + preds:
        if len(arr) != n:
            raise ValueError("stage arrays must match the split length")
    if len(stage_macs) != m_stages:
        raise ValueError("stage_macs must match stage count")

    exit_stage = np.full(n, m_stages - 1, dtype=np.int64)
    undecided = np.ones(n, dtype=bool)
    for m in range(m_stages - 1):
        exits = undecided & (confs[m] > deltas[m])
        exit_stage[exits] = m
        undecided &= ~exits
    counts = np.bincount(exit_stage, minlength=m_stages)
    pred_matrix = np.stack(preds, axis=0)
    chosen = pred_matrix[exit_stage, np.arange(n)]
    acc = float(np.mean(chosen == labels))
    macs = cascade_macs(stage_macs, counts, cumulative)
    return RoutingResult(
        exit_stages=exit_stage,
        exit_counts=tuple(int(c) for c in counts),
        acc_casc=acc,
        macs_casc=macs,
        sample_ids=tuple(sample_ids) if sample_ids is not None else None,
    )


@dataclass(frozen=True)
class MultistageSelection:
    """Thresholds chosen for an M-stage cascade plus their validation metrics."""

    deltas: tuple[float, ...]
    acc_casc: float
    macs_casc: float
    exit_counts: tuple[int, ...]
    policy: str
    feasible: bool


def _candidate_thresholds(confs: np.ndarray, cap: int) -> np.ndarray:
    """Unique confidences plus sentinels, evenly thinned to at most cap values."""
    uniq = np.unique(confs)
    cands = [uniq[0] - 1.0]
    cands.extend(uniq.tolist())
    if uniq[-1] != 1.0:
        cands.append(1.0)
    cands = np.asarray(cands, dtype=np.float64)
    if len(cands) > cap:
        idx = np.unique(np.round(np.linspace(0, len(cands) - 1, cap)).astype(int))
        cands = cands[idx]
    return cands


def _policy_key(policy, acc, macs, deltas, floor):
    if policy == "max_accuracy":
        return (-acc, macs, deltas)
    feas = acc >= floor
    # Feasible points sort before infeasible ones, which fall back to accuracy.
    if feas:
        return (0, macs, -acc, deltas)
    return (1, -acc, macs, deltas)


def search_multistage_thresholds(
    stage_tables,
    spec: CascadeSpec,
    candidate_cap: int = 200,
) -> MultistageSelection:
    """Search per-stage thresholds for an M-stage cascade on validation data.

    Three stages are solved by an exhaustive product over per-stage
    candidate sets (unique confidences, thinned to candidate_cap values).
    Deeper cascades fix the last threshold pair first and then sweep each
    earlier stage against the already-solved tail, reusing the same
    candidate sets.
    """
    tables = join_tables(list(stage_tables))
    m_stages = len(tables)
    if m_stages < 3:
        raise ValueError("search_multistage_thresholds expects at least 3 stages")
    if spec.num_stages != m_stages:
        raise ValueError("spec stage count must match the number of tables")
    n = tables[0].num_samples
    if n == 0:
        raise ValueError("empty validation split")
    labels = tables[0].labels
    confs = [confidences(t, spec.scoring) for t in tables[:-1]]
    preds = [t.predictions for t in tables]
    macs = spec.stage_macs
    cumulative = spec.cumulative_flags
    cands = [_candidate_thresholds(c, candidate_cap) for c in confs]
    floor = (1.0 - spec.epsilon) * float(np.mean(preds[-1] == labels))

    if m_stages == 3:
        deltas = _search_exhaustive_3(labels, confs, preds, macs, cumulative, cands, spec.policy, floor)
    else:
        deltas = _search_greedy(labels, confs, preds, macs, cumulative, cands, spec.policy, floor)

    result = route_multistage(confs, preds, labels, deltas, macs, cumulative)
    feasible = result.acc_casc >= floor if spec.policy == "constrained_min_cost" else True
    return MultistageSelection(
        deltas=tuple(deltas),
        acc_casc=result.acc_casc,
        macs_casc=result.macs_casc,
        exit_counts=result.exit_counts,
        policy=spec.policy,
        feasible=feasible,
    )


def _search_exhaustive_3(labels, confs, preds, macs, cumulative, cands, policy, floor):
    n = len(labels)
    costs = stage_exit_costs(macs, cumulative)
    correct = [np.asarray(p == labels, dtype=np.float64) for p in preds]
    best_key = None
    best = None
    for d1 in cands[0]:
        cont = confs[0] <= d1
        exit1_acc = float(np.sum(correct[0][~cont]))
        n1 = int(np.count_nonzero(~cont))
        c2 = confs[1][cont]
        order = np.argsort(c2, kind="stable")
        sc2 = c2[order]
        corr2 = correct[1][cont][order]
        corr3 = correct[2][cont][order]
        # Prefix sums over samples that reach stage 2, sorted by stage-2
        # confidence: a threshold d2 sends the prefix (conf <= d2) onward.
        pre3 = np.concatenate([[0.0], np.cumsum(corr3)])
        pre2 = np.concatenate([[0.0], np.cumsum(corr2)])
        tot2 = pre2[-1]
        routed = np.searchsorted(sc2, cands[1], side="right")
        for d2, r in zip(cands[1], routed):
            n_reach2 = len(sc2)
            n3 = int(r)
            n2 = n_reach2 - n3
            acc = (exit1_acc + (tot2 - pre2[r]) + pre3[r]) / n
            mc = (n1 * costs[0] + n2 * costs[1] + n3 * costs[2]) / n
            key = _policy_key(policy, acc, mc, (float(d1), float(d2)), floor)
            if best_key is None or key < best_key:
                best_key = key
                best = (float(d1), float(d2))
    return list(best)


def _pairwise_sweep_best(conf, head_correct, tail_correct, head_cost, tail_cost, cands, policy, floor):
    """Best threshold for one stage swept against a fixed composite tail.

    head_cost is the exit cost at this stage; tail_cost holds, per
    sample, the full cost it would pay if routed into the tail.
    """
    n = len(conf)
    order = np.argsort(conf, kind="stable")
    sc = conf[order]
    pre_tail = np.concatenate([[0.0], np.cumsum(tail_correct[order])])
    pre_head = np.concatenate([[0.0], np.cumsum(head_correct[order])])
    pre_cost = np.concatenate([[0.0], np.cumsum(tail_cost[order])])
    tot_head = pre_head[-1]
    routed = np.searchsorted(sc, cands, side="right")
    best_key = None
    best_delta = None
    for d, r in zip(cands, routed):
        acc = (pre_tail[r] + tot_head - pre_head[r]) / n
        mc = ((n - r) * head_cost + pre_cost[r]) / n
        key = _policy_key(policy, acc, mc, (float(d),), floor)
        if best_key is None or key < best_key:
            best_key = key
            best_delta = float(d)
    return best_delta


def _search_greedy(labels, confs, preds, macs, cumulative, cands, policy, floor):
    """Fix thresholds from the deepest stage pair outward.

    The tail of the cascade is solved first so that each earlier stage
    can be swept against a concrete composite: per-sample correctness and
    per-sample exit cost of the already-thresholded stages below it.
    """
    m_stages = len(preds)
    n = len(labels)
    costs = stage_exit_costs(macs, cumulative)
    correct = [np.asarray(p == labels, dtype=np.float64) for p in preds]
    deltas: list[float] = []
    tail_correct = correct[-1]
    tail_cost = np.full(n, costs[-1], dtype=np.float64)
    for m in range(m_stages - 2, -1, -1):
        d = _pairwise_sweep_best(
            conf=confs[m],
            head_correct=correct[m],
            tail_correct=tail_correct,
            head_cost=float(costs[m]),
            tail_cost=tail_cost,
            cands=cands[m],
            policy=policy,
            floor=floor,
        )
        deltas.insert(0, d)
        kept = confs[m] > d
        tail_correct = np.where(kept, correct[m], tail_correct)
        tail_cost = np.where(kept, costs[m], tail_cost)
    return deltas
