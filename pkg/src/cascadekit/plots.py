"""Figure rendering for run directories.

Every plot reads the same CSV rows the text report uses, so figures can
be rebuilt from a run directory without rerunning the benchmark. Agg is
forced before pyplot loads; nothing here needs a display.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from cascadekit.cascade import SweepCurve

DPI = 150
CASE_LABELS = ("both correct", "only first correct", "only last correct", "both wrong")
CASE_COLORS = ("#4c9f70", "#d1495b", "#30638e", "#8d8d8d")


def _save(fig, path) -> None:
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)


def plot_tradeoff(per_seed_rows, method_rows, path) -> None:
    """Accuracy against cost, one point per seed plus the per-method mean."""
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    colors = plt.rcParams["axes.prop_cycle"].by_key()["color"]
    for i, mrow in enumerate(method_rows):
        color = colors[i % len(colors)]
        seeds = [r for r in per_seed_rows if r["method"] == mrow["method"]]
        ax.scatter(
            [float(r["macs_casc"]) for r in seeds],
            [float(r["acc_casc"]) for r in seeds],
            s=14, alpha=0.45, color=color,
        )
        ax.scatter(
            [float(mrow["macs_mean"])], [float(mrow["acc_mean"])],
            s=70, color=color, edgecolor="black", linewidth=0.6, label=mrow["method"],
        )
    ax.set_xlabel("mean multiply-accumulates per sample")
    ax.set_ylabel("cascade accuracy")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_sweeps(curve_files, path) -> None:
    """Threshold sweeps (seed 0): accuracy and cost as the threshold moves."""
    fig, (ax_acc, ax_macs) = plt.subplots(1, 2, figsize=(8.4, 3.4))
    for file in curve_files:
        curve = SweepCurve.from_csv(file)
        label = Path(file).stem.rsplit("_seed", 1)[0]
        ax_acc.step(curve.delta, curve.acc_casc, where="post", label=label)
        ax_macs.step(curve.delta, curve.macs_casc, where="post", label=label)
    ax_acc.set_xlabel("threshold")
    ax_acc.set_ylabel("cascade accuracy")
    ax_macs.set_xlabel("threshold")
    ax_macs.set_ylabel("mean multiply-accumulates")
    ax_acc.grid(alpha=0.3)
    ax_macs.grid(alpha=0.3)
    ax_acc.legend(fontsize=8)
    _save(fig, path)


def _read_hist(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    lo = np.array([float(r["bin_lo"]) for r in rows])
    hi = np.array([float(r["bin_hi"]) for r in rows])
    counts = np.column_stack(
        [
            np.array([int(r[k]) for r in rows])
            for k in ("both_correct", "fast_only", "exp_only", "both_wrong")
        ]
    )
    return lo, hi, counts


def plot_conf_cases(hist_files, path) -> None:
    """Stacked confidence histograms split by which stages were correct."""
    n = len(hist_files)
    fig, axes = plt.subplots(1, n, figsize=(4.2 * n, 3.4), squeeze=False)
    for ax, file in zip(axes[0], hist_files):
        lo, hi, counts = _read_hist(file)
        width = hi - lo
        bottom = np.zeros(len(lo))
        for j in range(4):
            ax.bar(
                lo, counts[:, j], width=width, bottom=bottom, align="edge",
                color=CASE_COLORS[j], label=CASE_LABELS[j], linewidth=0,
            )
            bottom += counts[:, j]
        ax.set_title(Path(file).stem, fontsize=9)
        ax.set_xlabel("first-stage confidence")
        ax.set_ylabel("test samples")
    axes[0, 0].legend(fontsize=7)
    _save(fig, path)


def plot_cost_sweep(cost_rows, path) -> None:
    """Routing cost and accuracy as the loss cost parameter varies."""
    rows = sorted(cost_rows, key=lambda r: float(r["cost"]))
    costs = [float(r["cost"]) for r in rows]
    macs = [float(r["macs_mean"]) for r in rows]
    macs_se = [float(r["macs_se"]) if r["macs_se"] else 0.0 for r in rows]
    accs = [float(r["acc_mean"]) for r in rows]
    acc_se = [float(r["acc_se"]) if r["acc_se"] else 0.0 for r in rows]

    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    ax.errorbar(costs, macs, yerr=macs_se, marker="o", color="#30638e", label="cost")
    ax.set_xlabel("loss cost parameter")
    ax.set_ylabel("mean multiply-accumulates", color="#30638e")
    ax2 = ax.twinx()
    ax2.errorbar(costs, accs, yerr=acc_se, marker="s", color="#d1495b", label="accuracy")
    ax2.set_ylabel("cascade accuracy", color="#d1495b")
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_training(histories, path) -> None:
    """Per-epoch training loss for one or more labelled histories."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for label, history in histories.items():
        ax.plot([h.epoch for h in history], [h.loss_total for h in history], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    _save(fig, path)
