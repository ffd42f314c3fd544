"""Command line front end.

Subcommands cover the pipeline pieces (gen-data, train, export-logits,
calibrate, sweep, select, evaluate) and the packaged benchmark
(experiment, report). Exit codes: 0 on success, 2 for bad input or bad
files, 1 for operating system trouble.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from cascadekit.cascade import (
    SweepCurve,
    route_multistage,
    select_threshold,
    sweep_thresholds,
)
from cascadekit.confidence import apply_temperature, confidences, ece, fit_temperature, nll
from cascadekit.data import (
    POLICIES,
    SCORING_METHODS,
    CascadeSpec,
    LogitTable,
    ModelProfile,
    StageSpec,
    join_tables,
    load_logit_table,
    write_logit_table,
)
from cascadekit.errors import CascadeKitError, ConfigError, JoinError
from cascadekit.experiment import load_experiment_config, run_experiment, write_report, render_dir
from cascadekit.nets import forward, load_net, make_mlp, make_multi_exit, save_net
from cascadekit.synthetic import (
    SyntheticSpec,
    gen_synthetic,
    load_features,
    spec_from_mapping,
    write_features,
)
from cascadekit.training import LossSpec, TrainConfig, accuracy, train
from cascadekit.util import fmt_float, read_yaml


def _print_kv(**pairs) -> None:
    for key, value in pairs.items():
        if isinstance(value, float):
            value = fmt_float(value)
        print(f"{key}={value}")


def _cmd_gen_data(args) -> int:
    if args.config:
        spec = spec_from_mapping(read_yaml(args.config))
    else:
        spec = SyntheticSpec(
            num_classes=args.classes,
            dim=args.dim,
            n_train=args.train,
            n_val=args.val,
            n_test=args.test,
            separation=args.separation,
            clusters_per_class=args.clusters,
            seed=args.seed,
        )
    data = gen_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for split in ("train", "val", "test"):
        write_features(data.split(split), out / f"{split}.csv")
    _print_kv(out_dir=out, classes=spec.num_classes, dim=spec.dim,
              train=spec.n_train, val=spec.n_val, test=spec.n_test)
    return 0


def _aligned_correctness(table: LogitTable, sample_ids) -> np.ndarray:
    pos = {sid: i for i, sid in enumerate(table.sample_ids)}
    missing = [sid for sid in sample_ids if sid not in pos]
    if missing:
        raise JoinError(f"expensive logits missing sample ids: {missing[:3]}")
    idx = np.array([pos[sid] for sid in sample_ids])
    return (table.predictions == table.labels)[idx]


def _cmd_train(args) -> int:
    cfg = read_yaml(args.config)
    unknown = set(cfg) - {"data", "net", "init_seed", "train", "loss"}
    if unknown:
        raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
    data_cfg = cfg.get("data")
    if not isinstance(data_cfg, dict) or "features" not in data_cfg:
        raise ConfigError("train config needs data.features")
    features = load_features(data_cfg["features"], data_cfg.get("classes"))

    net_cfg = cfg.get("net")
    if not isinstance(net_cfg, dict) or "hidden" not in net_cfg:
        raise ConfigError("train config needs net.hidden")
    hidden = tuple(int(h) for h in net_cfg["hidden"])
    rng = np.random.default_rng(int(cfg.get("init_seed", 0)))
    if "exits" in net_cfg:
        exits = tuple(int(e) for e in net_cfg["exits"])
        net = make_multi_exit(features.x.shape[1], hidden, features.num_classes, exits, rng)
    else:
        net = make_mlp(features.x.shape[1], hidden, features.num_classes, rng)

    train_cfg_raw = cfg.get("train", {})
    if not isinstance(train_cfg_raw, dict):
        raise ConfigError("train settings must be a mapping")
    allowed = {"epochs", "batch_size", "lr", "lr_decay", "decay_epochs",
               "momentum", "weight_decay", "seed"}
    unknown = set(train_cfg_raw) - allowed
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    base = TrainConfig()
    train_cfg = TrainConfig(
        epochs=int(train_cfg_raw.get("epochs", base.epochs)),
        batch_size=int(train_cfg_raw.get("batch_size", base.batch_size)),
        lr=float(train_cfg_raw.get("lr", base.lr)),
        lr_decay=float(train_cfg_raw.get("lr_decay", base.lr_decay)),
        decay_epochs=tuple(train_cfg_raw.get("decay_epochs", base.decay_epochs)),
        momentum=float(train_cfg_raw.get("momentum", base.momentum)),
        weight_decay=float(train_cfg_raw.get("weight_decay", base.weight_decay)),
        seed=int(train_cfg_raw.get("seed", base.seed)),
    )

    loss_cfg = cfg.get("loss", {})
    if not isinstance(loss_cfg, dict):
        raise ConfigError("loss must be a mapping")
    unknown = set(loss_cfg) - {"kind", "weight", "cost", "expensive_logits"}
    if unknown:
        raise ConfigError(f"unknown loss keys: {sorted(unknown)}")
    loss = LossSpec(
        kind=str(loss_cfg.get("kind", "org_only")),
        weight=float(loss_cfg.get("weight", 0.0)),
        cost=float(loss_cfg.get("cost", 0.5)),
    )
    exp_correct = None
    if loss.kind == "cascade" and net.num_exits == 1:
        if "expensive_logits" not in loss_cfg:
            raise ConfigError("cascade loss on a single-exit net needs loss.expensive_logits")
        exp_table = load_logit_table(loss_cfg["expensive_logits"])
        exp_correct = _aligned_correctness(exp_table, features.sample_ids)

    net, history = train(net, features.x, features.y, train_cfg, loss, exp_correct)
    save_net(net, args.out)
    last = history[-1]
    _print_kv(
        out=args.out,
        epochs=len(history),
        final_loss=last.loss_total,
        train_accuracy=accuracy(net, features.x, features.y),
    )
    return 0


def _exit_path(base: Path, exit_index: int, num_exits: int) -> Path:
    if num_exits == 1:
        return base
    return base.with_name(f"{base.stem}_exit{exit_index}{base.suffix}")


def _cmd_export_logits(args) -> int:
    net = load_net(args.net)
    features = load_features(args.features, net.num_classes)
    all_logits = forward(net, features.x)
    base = Path(args.out)
    for m, logits in enumerate(all_logits):
        model_id = args.model_id or base.stem
        if net.num_exits > 1:
            model_id = f"{model_id}_exit{m}"
        table = LogitTable(
            model_id=model_id,
            num_classes=net.num_classes,
            sample_ids=features.sample_ids,
            labels=features.y,
            logits=logits,
        )
        path = _exit_path(base, m, net.num_exits)
        write_logit_table(table, path)
        _print_kv(out=path, accuracy=float(np.mean(table.predictions == table.labels)))
    return 0


def _cmd_calibrate(args) -> int:
    val = load_logit_table(args.val)
    t = fit_temperature(val)
    scaled = apply_temperature(val, t)
    _print_kv(
        temperature=t,
        nll_before=nll(val),
        nll_after=nll(scaled),
        ece_before=ece(val, bins=args.bins),
        ece_after=ece(scaled, bins=args.bins),
    )
    if args.out:
        write_logit_table(scaled, args.out)
    if args.apply_to:
        if not args.apply_out:
            raise ConfigError("--apply-to needs --apply-out")
        other = load_logit_table(args.apply_to)
        write_logit_table(apply_temperature(other, t), args.apply_out)
    return 0


def _two_stage_spec(args, fast_id: str, exp_id: str) -> CascadeSpec:
    cumulative = args.cumulative or [0, 0]
    if len(cumulative) != 2:
        raise ConfigError("--cumulative needs one flag per stage (2)")
    return CascadeSpec(
        stages=(
            StageSpec(ModelProfile(fast_id, args.macs[0]), fast_id, bool(cumulative[0])),
            StageSpec(ModelProfile(exp_id, args.macs[1]), exp_id, bool(cumulative[1])),
        ),
        scoring=args.method,
    )


def _cmd_sweep(args) -> int:
    fast = load_logit_table(args.val)
    exp = load_logit_table(args.expensive)
    spec = _two_stage_spec(args, fast.model_id, exp.model_id)
    curve = sweep_thresholds(fast, exp, spec)
    curve.to_csv(args.out)
    _print_kv(out=args.out, points=len(curve.delta))
    return 0


def _cmd_select(args) -> int:
    curve = SweepCurve.from_csv(args.curve)
    selection = select_threshold(
        curve,
        policy=args.policy,
        epsilon=args.epsilon,
        expensive_accuracy=args.expensive_accuracy,
    )
    _print_kv(
        delta=selection.delta,
        acc_casc=selection.acc_casc,
        n_exp=selection.n_exp,
        macs_casc=selection.macs_casc,
        policy=selection.policy,
        feasible=int(selection.feasible),
    )
    return 0


def _cmd_evaluate(args) -> int:
    if len(args.tables) < 2:
        raise ConfigError("evaluate needs at least 2 logit tables")
    if len(args.deltas) != len(args.tables) - 1:
        raise ConfigError(
            f"threshold count mismatch: expected {len(args.tables) - 1}, got {len(args.deltas)}"
        )
    if len(args.macs) != len(args.tables):
        raise ConfigError(f"macs count mismatch: expected {len(args.tables)}, got {len(args.macs)}")
    cumulative = args.cumulative or [0] * len(args.tables)
    if len(cumulative) != len(args.tables):
        raise ConfigError("--cumulative needs one flag per stage")
    tables = join_tables([load_logit_table(p) for p in args.tables])
    confs = [confidences(t, args.method) for t in tables[:-1]]
    preds = [t.predictions for t in tables]
    routing = route_multistage(
        confs, preds, tables[0].labels, args.deltas,
        args.macs, [bool(c) for c in cumulative],
        sample_ids=tables[0].sample_ids,
    )
    _print_kv(
        samples=sum(routing.exit_counts),
        acc_casc=routing.acc_casc,
        macs_casc=routing.macs_casc,
        exit_counts=";".join(str(c) for c in routing.exit_counts),
    )
    return 0


def _cmd_experiment(args) -> int:
    config = load_experiment_config(args.config)
    report = run_experiment(config, num_seeds=args.seeds)
    write_report(report, args.out, keep_logits=args.keep_logits)
    print((Path(args.out) / "report.txt").read_text(encoding="utf-8"), end="")
    return 0


def _cmd_report(args) -> int:
    print(render_dir(args.dir), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascadekit",
        description="Train toy model cascades, pick routing thresholds, and report the trade-off.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic blob feature splits")
    p.add_argument("--config", help="YAML mapping with data settings")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--train", type=int, default=3000)
    p.add_argument("--val", type=int, default=1500)
    p.add_argument("--test", type=int, default=1500)
    p.add_argument("--separation", type=float, default=5.0)
    p.add_argument("--clusters", type=int, default=1, help="clusters per class on the ring")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a toy net from a YAML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="net JSON path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("export-logits", help="run a net over features and write logit tables")
    p.add_argument("--net", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--model-id", default=None)
    p.add_argument("--out", required=True, help="multi-exit nets add an _exit<m> suffix")
    p.set_defaults(func=_cmd_export_logits)

    p = sub.add_parser("calibrate", help="fit a softmax temperature on a validation table")
    p.add_argument("--val", required=True)
    p.add_argument("--bins", type=int, default=15)
    p.add_argument("--out", default=None, help="write the rescaled validation table")
    p.add_argument("--apply-to", default=None, help="apply the fitted temperature to another table")
    p.add_argument("--apply-out", default=None)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("sweep", help="exact two-stage threshold sweep on validation tables")
    p.add_argument("--val", required=True, help="first-stage logit table")
    p.add_argument("--expensive", required=True, help="last-stage logit table")
    p.add_argument("--macs", type=float, nargs=2, required=True, metavar=("FAST", "EXP"))
    p.add_argument("--cumulative", type=int, nargs="+", default=None, choices=(0, 1))
    p.add_argument("--method", default="max_prob", choices=SCORING_METHODS)
    p.add_argument("--out", required=True, help="curve CSV path")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("select", help="pick an operating point from a sweep curve")
    p.add_argument("--curve", required=True)
    p.add_argument("--policy", default="max_accuracy", choices=POLICIES)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--expensive-accuracy", type=float, default=None)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("evaluate", help="route samples through fixed thresholds and score")
    p.add_argument("--tables", nargs="+", required=True, help="logit tables, cheapest first")
    p.add_argument("--deltas", type=float, nargs="+", required=True)
    p.add_argument("--macs", type=float, nargs="+", required=True)
    p.add_argument("--cumulative", type=int, nargs="+", default=None, choices=(0, 1))
    p.add_argument("--method", default="max_prob", choices=SCORING_METHODS)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("experiment", help="run a benchmark config end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="run directory (must not already hold files)")
    p.add_argument("--seeds", type=int, default=None, help="override the config seed count")
    p.add_argument("--keep-logits", action="store_true")
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("report", help="rebuild report.txt and figures from a run directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CascadeKitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
