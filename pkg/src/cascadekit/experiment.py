"""End-to-end benchmark runs on synthetic data.

One run means: for each replicate seed, generate blob data, train every
stage plainly, retrain cheap stages for each method that asks for it,
pick thresholds on the validation split, and score the cascade on the
test split. Results aggregate over seeds as mean and standard error.

Replicates are controlled comparisons: within a seed, every method sees
the same data, the same frozen deepest stage, and the same cheap-stage
initialization and shuffle stream.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from cascadekit.cascade import (
    SweepCurve,
    route_multistage,
    search_multistage_thresholds,
    select_threshold,
    sweep_thresholds,
)
from cascadekit.confidence import apply_temperature, confidences, fit_temperature
from cascadekit.data import (
    POLICIES,
    SCORING_METHODS,
    CascadeSpec,
    LogitTable,
    ModelProfile,
    StageSpec,
    write_logit_table,
)
from cascadekit.errors import ConfigError
from cascadekit.loss import cascading_schedule
from cascadekit.nets import ToyNet, count_macs, exit_macs, forward, make_mlp, make_multi_exit
from cascadekit.synthetic import FeatureTable, SyntheticSpec, gen_synthetic, spec_from_mapping
from cascadekit.training import CorrectnessCache, EpochStats, LossSpec, TrainConfig, train
from cascadekit.util import atomic_write_text, fmt_float, read_yaml, staged_dir

METHOD_KINDS = ("baseline", "temp_scaling", "cascade_loss")
HIST_BINS = 20


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str
    weight: float | None = None
    cost: float = 0.5

    def __post_init__(self):
        if not self.name or not all(c.isalnum() or c in "_-" for c in self.name):
            raise ConfigError(f"method name {self.name!r} must be alphanumeric with _ or -")
        if self.kind not in METHOD_KINDS:
            raise ConfigError(f"unknown method kind {self.kind!r}")
        if self.kind == "cascade_loss":
            if self.weight is None:
                raise ConfigError(f"method {self.name!r}: cascade_loss needs an explicit weight")
            if not math.isfinite(self.weight) or self.weight < 0:
                raise ConfigError(f"method {self.name!r}: weight must be non-negative")
        if not math.isfinite(self.cost) or self.cost < 0:
            raise ConfigError(f"method {self.name!r}: cost must be non-negative")


@dataclass(frozen=True)
class StagePlan:
    hidden: tuple[int, ...]
    train: TrainConfig


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    data: SyntheticSpec
    setting: str
    stages: tuple[StagePlan, ...]
    attachments: tuple[int, ...]
    methods: tuple[MethodSpec, ...]
    scoring: str = "max_prob"
    policy: str = "max_accuracy"
    epsilon: float = 0.0
    seed: int = 0
    num_seeds: int = 5
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def num_stages(self) -> int:
        if self.setting == "splitting":
            return len(self.attachments)
        return len(self.stages)

    @property
    def cumulative(self) -> tuple[bool, ...]:
        return tuple(self.setting == "splitting" for _ in range(self.num_stages))

    def stage_names(self) -> tuple[str, ...]:
        m = self.num_stages
        if self.setting == "splitting":
            return tuple(f"exit{i + 1}" for i in range(m))
        if m == 2:
            return ("fast", "expensive")
        return tuple(f"stage{i + 1}" for i in range(m))


def _train_config_from(raw: dict, where: str) -> TrainConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: train settings must be a mapping")
    allowed = {"epochs", "batch_size", "lr", "lr_decay", "decay_epochs", "momentum", "weight_decay"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown train keys {sorted(unknown)} (seed is derived per run)")
    base = TrainConfig()
    try:
        return TrainConfig(
            epochs=int(raw.get("epochs", base.epochs)),
            batch_size=int(raw.get("batch_size", base.batch_size)),
            lr=float(raw.get("lr", base.lr)),
            lr_decay=float(raw.get("lr_decay", base.lr_decay)),
            decay_epochs=tuple(raw.get("decay_epochs", base.decay_epochs)),
            momentum=float(raw.get("momentum", base.momentum)),
            weight_decay=float(raw.get("weight_decay", base.weight_decay)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


_CONFIG_KEYS = {"name", "seed", "seeds", "data", "setting", "stages", "trunk", "cascade", "methods"}


def parse_experiment_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("experiment config must be a mapping")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    name = str(raw.get("name", "experiment"))
    data_raw = raw.get("data", {})
    if not isinstance(data_raw, dict):
        raise ConfigError("data must be a mapping")
    if "seed" in data_raw:
        raise ConfigError("data.seed is derived from the top-level seed; remove it")
    data = spec_from_mapping(data_raw)

    setting = str(raw.get("setting", "cascading"))
    if setting not in ("cascading", "splitting"):
        raise ConfigError(f"unknown setting {setting!r}")

    stages: list[StagePlan] = []
    attachments: tuple[int, ...] = ()
    if setting == "cascading":
        stages_raw = raw.get("stages")
        if not isinstance(stages_raw, list) or len(stages_raw) < 2:
            raise ConfigError("cascading needs a stages list with at least 2 entries")
        for i, entry in enumerate(stages_raw):
            if not isinstance(entry, dict) or "hidden" not in entry:
                raise ConfigError(f"stage {i}: needs a hidden widths list")
            unknown = set(entry) - {"hidden", "train"}
            if unknown:
                raise ConfigError(f"stage {i}: unknown keys {sorted(unknown)}")
            stages.append(
                StagePlan(
                    hidden=tuple(int(h) for h in entry["hidden"]),
                    train=_train_config_from(entry.get("train", {}), f"stage {i}"),
                )
            )
    else:
        trunk_raw = raw.get("trunk")
        if not isinstance(trunk_raw, dict):
            raise ConfigError("splitting needs a trunk mapping")
        unknown = set(trunk_raw) - {"hidden", "attachments", "train"}
        if unknown:
            raise ConfigError(f"trunk: unknown keys {sorted(unknown)}")
        if "hidden" not in trunk_raw or "attachments" not in trunk_raw:
            raise ConfigError("trunk needs hidden widths and attachments")
        attachments = tuple(int(a) for a in trunk_raw["attachments"])
        if len(attachments) < 2:
            raise ConfigError("splitting needs at least 2 exits")
        stages.append(
            StagePlan(
                hidden=tuple(int(h) for h in trunk_raw["hidden"]),
                train=_train_config_from(trunk_raw.get("train", {}), "trunk"),
            )
        )

    cascade_raw = raw.get("cascade", {})
    if not isinstance(cascade_raw, dict):
        raise ConfigError("cascade must be a mapping")
    unknown = set(cascade_raw) - {"scoring", "policy", "epsilon"}
    if unknown:
        raise ConfigError(f"cascade: unknown keys {sorted(unknown)}")
    scoring = str(cascade_raw.get("scoring", "max_prob"))
    if scoring not in SCORING_METHODS:
        raise ConfigError(f"unknown scoring method {scoring!r}")
    policy = str(cascade_raw.get("policy", "max_accuracy"))
    if policy not in POLICIES:
        raise ConfigError(f"unknown threshold policy {policy!r}")
    epsilon = float(cascade_raw.get("epsilon", 0.0))
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError("epsilon must lie in [0, 1]")

    methods_raw = raw.get("methods")
    if not isinstance(methods_raw, list) or not methods_raw:
        raise ConfigError("config must list at least one method")
    methods: list[MethodSpec] = []
    for i, entry in enumerate(methods_raw):
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ConfigError(f"method {i}: needs a kind")
        unknown = set(entry) - {"name", "kind", "weight", "cost"}
        if unknown:
            raise ConfigError(f"method {i}: unknown keys {sorted(unknown)}")
        kind = str(entry["kind"])
        methods.append(
            MethodSpec(
                name=str(entry.get("name", kind)),
                kind=kind,
                weight=float(entry["weight"]) if "weight" in entry else None,
                cost=float(entry.get("cost", 0.5)),
            )
        )
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ConfigError("method names must be unique")

    num_seeds = int(raw.get("seeds", 5))
    if num_seeds < 1:
        raise ConfigError("seeds must be positive")

    return ExperimentConfig(
        name=name,
        data=data,
        setting=setting,
        stages=tuple(stages),
        attachments=attachments,
        methods=tuple(methods),
        scoring=scoring,
        policy=policy,
        epsilon=epsilon,
        seed=int(raw.get("seed", 0)),
        num_seeds=num_seeds,
        raw=dict(raw),
    )


def load_experiment_config(path) -> ExperimentConfig:
    return parse_experiment_config(read_yaml(path))


@dataclass(frozen=True)
class SeedMethodResult:
    seed_index: int
    method: str
    kind: str
    weight: float | None
    cost: float
    deltas: tuple[float, ...]
    acc_casc: float
    macs_casc: float
    exit_counts: tuple[int, ...]
    feasible: bool
    constraint_satisfied: bool
    stage_accs: tuple[float, ...]
    confs: np.ndarray
    fast_correct: np.ndarray
    exp_correct: np.ndarray


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    results: list[SeedMethodResult]
    curves: dict[tuple[str, int], SweepCurve]
    histories: dict[tuple[str, int, int], list[EpochStats]]
    stage_macs: tuple[float, ...]
    logit_tables: dict[tuple[str, int, str, str], LogitTable]

    def rows_for(self, method: str) -> list[SeedMethodResult]:
        return [r for r in self.results if r.method == method]


def _mean_se(values) -> tuple[float, float | None]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if len(arr) < 2:
        return mean, None
    return mean, float(arr.std(ddof=1) / math.sqrt(len(arr)))


@dataclass(frozen=True)
class MethodSummary:
    method: str
    kind: str
    weight: float | None
    cost: float
    n_seeds: int
    acc_mean: float
    acc_se: float | None
    macs_mean: float
    macs_se: float | None
    frac_exp_mean: float
    frac_exp_se: float | None
    feasible_count: int
    constraint_count: int


def summarize(report: ExperimentReport) -> list[MethodSummary]:
    out = []
    for method in report.config.methods:
        rows = report.rows_for(method.name)
        if not rows:
            continue
        n = len(rows)
        total = [sum(r.exit_counts) for r in rows]
        acc_mean, acc_se = _mean_se([r.acc_casc for r in rows])
        macs_mean, macs_se = _mean_se([r.macs_casc for r in rows])
        frac_mean, frac_se = _mean_se(
            [r.exit_counts[-1] / t for r, t in zip(rows, total)]
        )
        out.append(
            MethodSummary(
                method=method.name,
                kind=method.kind,
                weight=method.weight,
                cost=method.cost,
                n_seeds=n,
                acc_mean=acc_mean,
                acc_se=acc_se,
                macs_mean=macs_mean,
                macs_se=macs_se,
                frac_exp_mean=frac_mean,
                frac_exp_se=frac_se,
                feasible_count=sum(r.feasible for r in rows),
                constraint_count=sum(r.constraint_satisfied for r in rows),
            )
        )
    return out


def _stage_seeds(root: np.random.SeedSequence, num_stages: int):
    """Deterministic (data, per-stage init, per-stage shuffle) seeds."""
    children = root.spawn(1 + num_stages)
    data_seed = int(children[0].generate_state(1)[0])
    stage_seeds = []
    for child in children[1:]:
        init, shuffle = (int(v) for v in child.generate_state(2))
        stage_seeds.append((init, shuffle))
    return data_seed, stage_seeds


def _tables_from_nets(nets, split: FeatureTable, names) -> list[LogitTable]:
    tables = []
    for net, name in zip(nets, names):
        logits = forward(net, split.x)[-1]
        tables.append(
            LogitTable(
                model_id=name,
                num_classes=split.num_classes,
                sample_ids=split.sample_ids,
                labels=split.y,
                logits=logits,
            )
        )
    return tables


def _tables_from_multi_exit(net: ToyNet, split: FeatureTable, names) -> list[LogitTable]:
    all_logits = forward(net, split.x)
    return [
        LogitTable(
            model_id=name,
            num_classes=split.num_classes,
            sample_ids=split.sample_ids,
            labels=split.y,
            logits=logits,
        )
        for logits, name in zip(all_logits, names)
    ]


def _evaluation_spec(config: ExperimentConfig, method: MethodSpec, stage_macs, names) -> CascadeSpec:
    stages = tuple(
        StageSpec(
            profile=ModelProfile(model_id=name, macs=float(macs)),
            logit_source=name,
            cumulative=cum,
        )
        for name, macs, cum in zip(names, stage_macs, config.cumulative)
    )
    return CascadeSpec(
        stages=stages,
        cost=method.cost,
        weight=method.weight if method.weight is not None else 0.0,
        epsilon=config.epsilon,
        scoring=config.scoring,
        policy=config.policy,
        seed=config.seed,
    )


def run_experiment(config: ExperimentConfig, num_seeds: int | None = None) -> ExperimentReport:
    """Run the full benchmark; see the module docstring for the contract."""
    if num_seeds is not None:
        config = replace(config, num_seeds=int(num_seeds), raw={**config.raw, "seeds": int(num_seeds)})
        if config.num_seeds < 1:
            raise ConfigError("seeds must be positive")
    results: list[SeedMethodResult] = []
    curves: dict[tuple[str, int], SweepCurve] = {}
    histories: dict[tuple[str, int, int], list[EpochStats]] = {}
    logit_tables: dict[tuple[str, int, str, str], LogitTable] = {}
    stage_macs: tuple[float, ...] | None = None

    root = np.random.SeedSequence(config.seed)
    for seed_index, child in enumerate(root.spawn(config.num_seeds)):
        seed_results, seed_curves, seed_hist, seed_macs, seed_tables = _run_one_seed(
            config, seed_index, child
        )
        results.extend(seed_results)
        curves.update(seed_curves)
        histories.update(seed_hist)
        logit_tables.update(seed_tables)
        stage_macs = seed_macs
    return ExperimentReport(
        config=config,
        results=results,
        curves=curves,
        histories=histories,
        stage_macs=stage_macs,
        logit_tables=logit_tables,
    )


def _run_one_seed(config: ExperimentConfig, seed_index: int, seed_seq: np.random.SeedSequence):
    names = config.stage_names()
    m_stages = config.num_stages
    n_trained = m_stages if config.setting == "cascading" else 1
    data_seed, stage_seeds = _stage_seeds(seed_seq, n_trained)
    data = gen_synthetic(replace(config.data, seed=data_seed))
    cache = CorrectnessCache()

    results = []
    curves = {}
    histories = {}
    tables_out = {}

    if config.setting == "cascading":
        org_nets, org_hists = _train_cascading_org(config, data, stage_seeds)
        stage_macs = tuple(float(count_macs(net)) for net in org_nets)
        method_nets = {}
        for method in config.methods:
            if method.kind in ("baseline", "temp_scaling"):
                method_nets[method.name] = org_nets
                for s, h in enumerate(org_hists):
                    histories[(method.name, seed_index, s)] = h
            else:
                nets, hists = _train_cascading_joint(config, data, stage_seeds, org_nets, method, cache)
                method_nets[method.name] = nets
                for s, h in enumerate(hists):
                    histories[(method.name, seed_index, s)] = h
        split_tables = {
            method.name: {
                split: _tables_from_nets(method_nets[method.name], data.split(split), names)
                for split in ("val", "test")
            }
            for method in config.methods
        }
    else:
        trunk_plan = config.stages[0]
        init_seed, shuffle_seed = stage_seeds[0]
        base_net = make_multi_exit(
            config.data.dim, trunk_plan.hidden, config.data.num_classes, config.attachments,
            np.random.default_rng(init_seed),
        )
        train_cfg = replace(trunk_plan.train, seed=shuffle_seed)
        org_net, org_hist = train(base_net, data.train.x, data.train.y, train_cfg, LossSpec("org_only"))
        stage_macs = tuple(float(v) for v in exit_macs(org_net))
        method_nets = {}
        for method in config.methods:
            if method.kind in ("baseline", "temp_scaling"):
                method_nets[method.name] = org_net
                histories[(method.name, seed_index, 0)] = org_hist
            else:
                fresh = make_multi_exit(
                    config.data.dim, trunk_plan.hidden, config.data.num_classes, config.attachments,
                    np.random.default_rng(init_seed),
                )
                net, hist = train(
                    fresh, data.train.x, data.train.y, train_cfg,
                    LossSpec("cascade", weight=method.weight, cost=method.cost),
                )
                method_nets[method.name] = net
                histories[(method.name, seed_index, 0)] = hist
        split_tables = {
            method.name: {
                split: _tables_from_multi_exit(method_nets[method.name], data.split(split), names)
                for split in ("val", "test")
            }
            for method in config.methods
        }

    for method in config.methods:
        val_tables = split_tables[method.name]["val"]
        test_tables = split_tables[method.name]["test"]
        if method.kind == "temp_scaling":
            val_tables = list(val_tables)
            test_tables = list(test_tables)
            for m in range(m_stages - 1):
                t = fit_temperature(val_tables[m])
                val_tables[m] = apply_temperature(val_tables[m], t)
                test_tables[m] = apply_temperature(test_tables[m], t)
        spec = _evaluation_spec(config, method, stage_macs, names)

        if m_stages == 2:
            curve = sweep_thresholds(val_tables[0], val_tables[1], spec)
            exp_val_acc = float(np.mean(val_tables[1].predictions == val_tables[1].labels))
            selection = select_threshold(curve, config.policy, config.epsilon, exp_val_acc)
            deltas = (selection.delta,)
            feasible = selection.feasible
            curves[(method.name, seed_index)] = curve
        else:
            mselection = search_multistage_thresholds(val_tables, spec)
            deltas = mselection.deltas
            feasible = mselection.feasible

        test_confs = [confidences(t, config.scoring) for t in test_tables[:-1]]
        test_preds = [t.predictions for t in test_tables]
        routing = route_multistage(
            test_confs,
            test_preds,
            test_tables[0].labels,
            deltas,
            stage_macs,
            config.cumulative,
            sample_ids=test_tables[0].sample_ids,
        )
        exp_test_acc = float(np.mean(test_preds[-1] == test_tables[-1].labels))
        constraint_ok = routing.acc_casc >= (1.0 - config.epsilon) * exp_test_acc
        stage_accs = tuple(
            float(np.mean(p == test_tables[0].labels)) for p in test_preds
        )
        results.append(
            SeedMethodResult(
                seed_index=seed_index,
                method=method.name,
                kind=method.kind,
                weight=method.weight,
                cost=method.cost,
                deltas=tuple(float(d) for d in deltas),
                acc_casc=routing.acc_casc,
                macs_casc=routing.macs_casc,
                exit_counts=routing.exit_counts,
                feasible=feasible,
                constraint_satisfied=bool(constraint_ok),
                stage_accs=stage_accs,
                confs=np.asarray(test_confs[0]),
                fast_correct=test_preds[0] == test_tables[0].labels,
                exp_correct=test_preds[-1] == test_tables[-1].labels,
            )
        )
        for split in ("val", "test"):
            for name, table in zip(names, split_tables[method.name][split]):
                tables_out[(method.name, seed_index, split, name)] = table

    return results, curves, histories, stage_macs, tables_out


def _train_cascading_org(config, data, stage_seeds):
    nets, hists = [], []
    for plan, (init_seed, shuffle_seed) in zip(config.stages, stage_seeds):
        net0 = make_mlp(
            config.data.dim, plan.hidden, config.data.num_classes,
            np.random.default_rng(init_seed),
        )
        cfg = replace(plan.train, seed=shuffle_seed)
        net, hist = train(net0, data.train.x, data.train.y, cfg, LossSpec("org_only"))
        nets.append(net)
        hists.append(hist)
    return nets, hists


def _train_cascading_joint(config, data, stage_seeds, org_nets, method, cache):
    """Retrain cheap stages deepest-first against their frozen successor."""
    nets = list(org_nets)
    hists = [None] * len(nets)
    schedule = cascading_schedule(len(nets))
    for step in schedule:
        if step.loss_kind == "org_only":
            continue  # the deepest stage is reused as already trained
        m = step.stage
        successor = nets[step.expensive_stage]
        exp_correct = cache.correctness(successor, data.train.x, data.train.y)
        init_seed, shuffle_seed = stage_seeds[m]
        net0 = make_mlp(
            config.data.dim, config.stages[m].hidden, config.data.num_classes,
            np.random.default_rng(init_seed),
        )
        cfg = replace(config.stages[m].train, seed=shuffle_seed)
        nets[m], hists[m] = train(
            net0, data.train.x, data.train.y, cfg,
            LossSpec("cascade", weight=method.weight, cost=method.cost),
            exp_correct=exp_correct,
        )
    for m, h in enumerate(hists):
        if h is None:
            hists[m] = []
    return nets, hists


def case_histogram(rows: list[SeedMethodResult], bins: int = HIST_BINS) -> np.ndarray:
    """Pooled confidence histogram split by the four correctness cases.

    Returns an array of shape (bins, 4) ordered: both correct, only the
    first stage correct, only the last stage correct, both wrong.
    """
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = np.zeros((bins, 4), dtype=np.int64)
    for r in rows:
        fc = r.fast_correct
        ec = r.exp_correct
        masks = [fc & ec, fc & ~ec, ~fc & ec, ~fc & ~ec]
        for j, mask in enumerate(masks):
            hist, _ = np.histogram(r.confs[mask], bins=edges)
            out[:, j] += hist
    return out


# ---- report files ----------------------------------------------------------


def write_report(report: ExperimentReport, out_dir, keep_logits: bool = False) -> Path:
    """Write the run's CSVs, text report, and figures atomically."""
    out_dir = Path(out_dir)
    with staged_dir(out_dir) as stage:
        atomic_write_text(stage / "config.yaml", yaml.safe_dump(report.config.raw, sort_keys=False))
        _write_per_seed_csv(report, stage / "per_seed.csv")
        _write_summary_csv(report, stage / "summary.csv")
        _write_stages_csv(report, stage / "stages.csv")
        curve_dir = stage / "curves"
        for (method, seed_index), curve in report.curves.items():
            curve_dir.mkdir(exist_ok=True)
            curve.to_csv(curve_dir / f"{method}_seed{seed_index}.csv")
        hist_dir = stage / "hists"
        hist_dir.mkdir(exist_ok=True)
        for method in report.config.methods:
            rows = report.rows_for(method.name)
            _write_hist_csv(case_histogram(rows), hist_dir / f"{method.name}.csv")
        if keep_logits:
            logit_dir = stage / "logits"
            for (method, seed_index, split, name), table in report.logit_tables.items():
                d = logit_dir / f"seed{seed_index}" / method
                d.mkdir(parents=True, exist_ok=True)
                write_logit_table(table, d / f"{name}_{split}.csv")
        render_dir(stage)
    return out_dir


def _write_per_seed_csv(report: ExperimentReport, path) -> None:
    lines = [
        "seed,method,kind,weight,cost,deltas,acc_casc,macs_casc,exit_counts,"
        "feasible,constraint_satisfied,stage_accs"
    ]
    for r in report.results:
        lines.append(
            ",".join(
                [
                    str(r.seed_index),
                    r.method,
                    r.kind,
                    "" if r.weight is None else fmt_float(r.weight),
                    fmt_float(r.cost),
                    ";".join(fmt_float(d) for d in r.deltas),
                    fmt_float(r.acc_casc),
                    fmt_float(r.macs_casc),
                    ";".join(str(c) for c in r.exit_counts),
                    str(int(r.feasible)),
                    str(int(r.constraint_satisfied)),
                    ";".join(fmt_float(a) for a in r.stage_accs),
                ]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def _write_summary_csv(report: ExperimentReport, path) -> None:
    lines = [
        "method,kind,weight,cost,n_seeds,acc_mean,acc_se,macs_mean,macs_se,"
        "frac_exp_mean,frac_exp_se,feasible_count,constraint_count"
    ]
    for s in summarize(report):
        lines.append(
            ",".join(
                [
                    s.method,
                    s.kind,
                    "" if s.weight is None else fmt_float(s.weight),
                    fmt_float(s.cost),
                    str(s.n_seeds),
                    fmt_float(s.acc_mean),
                    "" if s.acc_se is None else fmt_float(s.acc_se),
                    fmt_float(s.macs_mean),
                    "" if s.macs_se is None else fmt_float(s.macs_se),
                    fmt_float(s.frac_exp_mean),
                    "" if s.frac_exp_se is None else fmt_float(s.frac_exp_se),
                    str(s.feasible_count),
                    str(s.constraint_count),
                ]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def _write_stages_csv(report: ExperimentReport, path) -> None:
    """Stage profiles: macs plus mean plain-trained accuracy over seeds."""
    names = report.config.stage_names()
    baseline_like = next(
        (m.name for m in report.config.methods if m.kind == "baseline"),
        report.config.methods[0].name,
    )
    rows = report.rows_for(baseline_like)
    lines = ["stage,name,macs,cumulative,acc_mean,acc_se"]
    for i, name in enumerate(names):
        accs = [r.stage_accs[i] for r in rows]
        mean, se = _mean_se(accs) if accs else (float("nan"), None)
        lines.append(
            ",".join(
                [
                    str(i),
                    name,
                    fmt_float(report.stage_macs[i]),
                    str(int(report.config.cumulative[i])),
                    fmt_float(mean),
                    "" if se is None else fmt_float(se),
                ]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


def _write_hist_csv(hist: np.ndarray, path) -> None:
    bins = hist.shape[0]
    edges = np.linspace(0.0, 1.0, bins + 1)
    lines = ["bin_lo,bin_hi,both_correct,fast_only,exp_only,both_wrong"]
    for b in range(bins):
        lines.append(
            f"{fmt_float(edges[b])},{fmt_float(edges[b + 1])},"
            + ",".join(str(int(v)) for v in hist[b])
        )
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---- rendering from files --------------------------------------------------


def _read_csv_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def render_dir(run_dir) -> str:
    """Build report.txt and figures from a run directory's CSV files.

    Everything shown is re-derived from the written files, so rendering
    an existing directory reproduces the same report.
    """
    run_dir = Path(run_dir)
    summary_rows = _read_csv_rows(run_dir / "per_seed.csv")
    method_rows = _read_csv_rows(run_dir / "summary.csv")
    stage_rows = _read_csv_rows(run_dir / "stages.csv")
    config_raw = read_yaml(run_dir / "config.yaml")

    text = _render_text(config_raw, stage_rows, method_rows, summary_rows)
    atomic_write_text(run_dir / "report.txt", text)

    from cascadekit import plots

    fig_dir = run_dir / "figures"
    fig_dir.mkdir(exist_ok=True)
    plots.plot_tradeoff(summary_rows, method_rows, fig_dir / "tradeoff.png")
    curve_dir = run_dir / "curves"
    if curve_dir.is_dir():
        curve_files = sorted(curve_dir.glob("*_seed0.csv"))
        if curve_files:
            plots.plot_sweeps(curve_files, fig_dir / "sweep.png")
    hist_dir = run_dir / "hists"
    if hist_dir.is_dir():
        hist_files = sorted(hist_dir.glob("*.csv"))
        if hist_files:
            plots.plot_conf_cases(hist_files, fig_dir / "conf_cases.png")
    cost_rows = [r for r in method_rows if r["kind"] == "cascade_loss"]
    if len({r["cost"] for r in cost_rows}) >= 2:
        plots.plot_cost_sweep(cost_rows, fig_dir / "cost_sweep.png")
    return text


def _fmt_pm(mean: str, se: str, digits: int) -> str:
    m = float(mean)
    if se:
        return f"{m:.{digits}f} +- {float(se):.{digits}f}"
    return f"{m:.{digits}f}"


def _render_text(config_raw, stage_rows, method_rows, per_seed_rows) -> str:
    name = config_raw.get("name", "experiment")
    setting = config_raw.get("setting", "cascading")
    cascade_raw = config_raw.get("cascade", {}) or {}
    n_seeds = method_rows[0]["n_seeds"] if method_rows else "?"
    lines = [
        f"cascade benchmark: {name}",
        (
            f"setting={setting} scoring={cascade_raw.get('scoring', 'max_prob')} "
            f"policy={cascade_raw.get('policy', 'max_accuracy')} "
            f"epsilon={cascade_raw.get('epsilon', 0.0)} seeds={n_seeds}"
        ),
        "",
        "stage profiles (plain training, test split)",
        f"{'stage':<12} {'macs':>10} {'accuracy':>20}",
    ]
    for row in stage_rows:
        acc = _fmt_pm(row["acc_mean"], row["acc_se"], 4)
        lines.append(f"{row['name']:<12} {float(row['macs']):>10.1f} {acc:>20}")
    lines += [
        "",
        "cascade results (test split)",
        f"{'method':<16} {'acc_casc':>20} {'macs_casc':>22} {'frac_last_stage':>20}",
    ]
    for row in method_rows:
        lines.append(
            f"{row['method']:<16} {_fmt_pm(row['acc_mean'], row['acc_se'], 4):>20} "
            f"{_fmt_pm(row['macs_mean'], row['macs_se'], 1):>22} "
            f"{_fmt_pm(row['frac_exp_mean'], row['frac_exp_se'], 4):>20}"
        )
    policy = cascade_raw.get("policy", "max_accuracy")
    if policy == "constrained_min_cost":
        lines.append("")
        for row in method_rows:
            lines.append(
                f"{row['method']}: constraint feasible on validation in "
                f"{row['feasible_count']}/{row['n_seeds']} seeds, satisfied on test in "
                f"{row['constraint_count']}/{row['n_seeds']}"
            )
    exit_counts = [r["exit_counts"] for r in per_seed_rows]
    if exit_counts and len(exit_counts[0].split(";")) > 2:
        lines.append("")
        lines.append("mean exit fractions per stage")
        by_method: dict[str, list[np.ndarray]] = {}
        for r in per_seed_rows:
            counts = np.array([int(c) for c in r["exit_counts"].split(";")], dtype=np.float64)
            by_method.setdefault(r["method"], []).append(counts / counts.sum())
        for method, arrs in by_method.items():
            fracs = np.mean(arrs, axis=0)
            lines.append(f"{method:<16} " + " ".join(f"{f:.4f}" for f in fracs))
    lines.append("")
    return "\n".join(lines)


def default_benchmark_config(**overrides) -> ExperimentConfig:
    """The stock two-stage blob benchmark used by the acceptance suite."""
    raw = {
        "name": "blobs-default",
        "seed": 7,
        "seeds": 5,
        "data": {
            "classes": 10, "dim": 2, "train": 6000, "val": 6000, "test": 3000,
            "separation": 16.0, "clusters": 3,
        },
        "setting": "cascading",
        "stages": [
            {
                # deliberately short schedule: a fully converged stage is
                # near-calibrated, leaving the routing loss nothing to fix
                "hidden": [8],
                "train": {
                    "epochs": 6, "batch_size": 64, "lr": 0.1, "lr_decay": 0.2,
                    "decay_epochs": [3, 5], "momentum": 0.9, "weight_decay": 0.0005,
                },
            },
            {
                "hidden": [64, 64],
                "train": {
                    "epochs": 60, "batch_size": 64, "lr": 0.1, "lr_decay": 0.2,
                    "decay_epochs": [40, 52], "momentum": 0.9, "weight_decay": 0.0005,
                },
            },
        ],
        "cascade": {"scoring": "max_prob", "policy": "max_accuracy", "epsilon": 0.0},
        "methods": [
            {"name": "baseline", "kind": "baseline"},
            {"name": "temp_scaling", "kind": "temp_scaling"},
            {"name": "cascade_loss", "kind": "cascade_loss", "weight": 4.0, "cost": 0.5},
        ],
    }
    raw.update(overrides)
    return parse_experiment_config(raw)
