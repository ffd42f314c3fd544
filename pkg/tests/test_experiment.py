"""Experiment runner: config parsing, seeding, reporting, file layout."""

from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from cascadekit.errors import ConfigError
from cascadekit.experiment import (
    case_histogram,
    default_benchmark_config,
    load_experiment_config,
    parse_experiment_config,
    run_experiment,
    render_dir,
    summarize,
    write_report,
)

TINY = {
    "name": "tiny",
    "seed": 3,
    "seeds": 2,
    "data": {"classes": 3, "dim": 2, "train": 240, "val": 240, "test": 120,
             "separation": 8.0, "clusters": 1},
    "setting": "cascading",
    "stages": [
        {"hidden": [4], "train": {"epochs": 2, "batch_size": 64}},
        {"hidden": [8], "train": {"epochs": 3, "batch_size": 64}},
    ],
    "methods": [
        {"name": "baseline", "kind": "baseline"},
        {"name": "temp_scaling", "kind": "temp_scaling"},
        {"name": "joint", "kind": "cascade_loss", "weight": 2.0, "cost": 0.5},
        {"name": "joint_w0", "kind": "cascade_loss", "weight": 0.0, "cost": 0.5},
    ],
}


def _tiny_config(**overrides):
    raw = {**TINY, **overrides}
    return parse_experiment_config(raw)


@pytest.fixture(scope="module")
def tiny_report():
    return run_experiment(_tiny_config())


def test_parse_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown experiment keys"):
        parse_experiment_config({**TINY, "extra": 1})
    bad_stage = [{"hidden": [4], "width": 9}, {"hidden": [8]}]
    with pytest.raises(ConfigError, match="stage 0"):
        parse_experiment_config({**TINY, "stages": bad_stage})
    with pytest.raises(ConfigError, match="cascade:"):
        parse_experiment_config({**TINY, "cascade": {"rule": "x"}})


def test_parse_rejects_data_seed():
    data = {**TINY["data"], "seed": 1}
    with pytest.raises(ConfigError, match="data.seed"):
        parse_experiment_config({**TINY, "data": data})


def test_parse_method_validation():
    methods = [{"name": "m", "kind": "cascade_loss"}]
    with pytest.raises(ConfigError, match="explicit weight"):
        parse_experiment_config({**TINY, "methods": methods})
    methods = [{"name": "m.1", "kind": "baseline"}]
    with pytest.raises(ConfigError, match="alphanumeric"):
        parse_experiment_config({**TINY, "methods": methods})
    methods = [{"name": "m", "kind": "baseline"}, {"name": "m", "kind": "temp_scaling"}]
    with pytest.raises(ConfigError, match="unique"):
        parse_experiment_config({**TINY, "methods": methods})
    with pytest.raises(ConfigError, match="unknown method kind"):
        parse_experiment_config({**TINY, "methods": [{"name": "m", "kind": "oracle"}]})


def test_parse_cascade_block():
    with pytest.raises(ConfigError, match="scoring"):
        _tiny_config(cascade={"scoring": "entropy_sq"})
    with pytest.raises(ConfigError, match="policy"):
        _tiny_config(cascade={"policy": "cheapest"})
    with pytest.raises(ConfigError, match="epsilon"):
        _tiny_config(cascade={"epsilon": 2.0})
    cfg = _tiny_config(cascade={"policy": "constrained_min_cost", "epsilon": 0.02})
    assert cfg.policy == "constrained_min_cost"
    assert cfg.epsilon == 0.02


def test_parse_setting_validation():
    with pytest.raises(ConfigError, match="setting"):
        _tiny_config(setting="stacking")
    with pytest.raises(ConfigError, match="at least 2"):
        _tiny_config(stages=[{"hidden": [4]}])
    with pytest.raises(ConfigError, match="seeds"):
        _tiny_config(seeds=0)


def test_repo_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("default.yaml", "cost_sweep.yaml", "three_stage.yaml", "splitting.yaml"):
        cfg = load_experiment_config(root / name)
        assert cfg.num_seeds >= 1
    default = load_experiment_config(root / "default.yaml")
    stock = default_benchmark_config()
    assert default.raw == stock.raw


def test_runs_are_deterministic(tiny_report):
    again = run_experiment(_tiny_config())
    assert len(again.results) == len(tiny_report.results)
    for a, b in zip(tiny_report.results, again.results):
        assert (a.seed_index, a.method, a.deltas) == (b.seed_index, b.method, b.deltas)
        assert (a.acc_casc, a.macs_casc, a.exit_counts) == (b.acc_casc, b.macs_casc, b.exit_counts)
        npt.assert_array_equal(a.confs, b.confs)


def test_row_inventory(tiny_report):
    # every method appears once per seed
    assert len(tiny_report.results) == 2 * 4
    for method in ("baseline", "temp_scaling", "joint", "joint_w0"):
        rows = tiny_report.rows_for(method)
        assert [r.seed_index for r in rows] == [0, 1]
        for r in rows:
            assert sum(r.exit_counts) == 120
            assert 0.0 <= r.acc_casc <= 1.0
            assert len(r.stage_accs) == 2


def test_weight_zero_method_equals_baseline(tiny_report):
    base = tiny_report.rows_for("baseline")
    w0 = tiny_report.rows_for("joint_w0")
    for a, b in zip(base, w0):
        assert a.deltas == b.deltas
        assert a.acc_casc == b.acc_casc
        assert a.macs_casc == b.macs_casc
        assert a.exit_counts == b.exit_counts
        npt.assert_array_equal(a.confs, b.confs)


def test_methods_share_the_expensive_stage(tiny_report):
    base = tiny_report.rows_for("baseline")
    joint = tiny_report.rows_for("joint")
    for a, b in zip(base, joint):
        assert a.stage_accs[-1] == b.stage_accs[-1]


def test_num_seeds_override():
    report = run_experiment(_tiny_config(), num_seeds=1)
    assert sorted({r.seed_index for r in report.results}) == [0]
    # the first seed's rows match the full run's first seed
    full = run_experiment(_tiny_config())
    for a, b in zip(report.rows_for("baseline"), full.rows_for("baseline")[:1]):
        assert a.acc_casc == b.acc_casc
        assert a.deltas == b.deltas


def test_summarize_hand_check(tiny_report):
    summaries = {s.method: s for s in summarize(tiny_report)}
    rows = tiny_report.rows_for("joint")
    accs = np.array([r.acc_casc for r in rows])
    s = summaries["joint"]
    assert s.n_seeds == 2
    assert s.acc_mean == pytest.approx(accs.mean())
    assert s.acc_se == pytest.approx(accs.std(ddof=1) / np.sqrt(2))
    assert s.kind == "cascade_loss"
    assert s.weight == 2.0
    fracs = [r.exit_counts[-1] / sum(r.exit_counts) for r in rows]
    assert s.frac_exp_mean == pytest.approx(np.mean(fracs))
    # max_accuracy selections are always feasible
    assert s.feasible_count == 2


def test_case_histogram_partitions_the_split(tiny_report):
    rows = tiny_report.rows_for("baseline")
    hist = case_histogram(rows, bins=10)
    assert hist.shape == (10, 4)
    assert hist.min() >= 0
    # every validation sample of every row lands in exactly one cell
    assert hist.sum() == sum(len(r.confs) for r in rows)


def test_write_report_inventory(tiny_report, tmp_path):
    out = tmp_path / "run"
    write_report(tiny_report, out)
    expected = [
        "config.yaml", "per_seed.csv", "summary.csv", "stages.csv", "report.txt",
        "hists/baseline.csv", "hists/joint.csv",
        "curves/baseline_seed0.csv", "curves/joint_seed1.csv",
        "figures/tradeoff.png", "figures/sweep.png", "figures/conf_cases.png",
    ]
    for rel in expected:
        assert (out / rel).is_file(), rel
    # refuses to overwrite a non-empty directory
    with pytest.raises(ConfigError, match="not empty"):
        write_report(tiny_report, out)


def test_render_dir_is_reproducible_from_files(tiny_report, tmp_path):
    out = tmp_path / "run"
    write_report(tiny_report, out)
    first = (out / "report.txt").read_text()
    (out / "report.txt").unlink()
    (out / "figures" / "tradeoff.png").unlink()
    text = render_dir(out)
    assert (out / "report.txt").read_text() == first == text
    assert (out / "figures" / "tradeoff.png").is_file()


def test_splitting_setting_runs():
    raw = {
        "name": "tiny-split",
        "seed": 5,
        "seeds": 1,
        "data": {"classes": 3, "dim": 2, "train": 240, "val": 240, "test": 120,
                 "separation": 8.0, "clusters": 1},
        "setting": "splitting",
        "trunk": {"hidden": [4, 6], "attachments": [1, 2],
                  "train": {"epochs": 2, "batch_size": 64}},
        "methods": [
            {"name": "baseline", "kind": "baseline"},
            {"name": "joint", "kind": "cascade_loss", "weight": 1.0, "cost": 0.5},
        ],
    }
    report = run_experiment(parse_experiment_config(raw))
    assert len(report.results) == 2
    for r in report.results:
        assert sum(r.exit_counts) == 120
    # multi-exit cost accounting is cumulative: never above the full net
    full_cost = max(r.macs_casc for r in report.results)
    assert all(r.macs_casc <= full_cost + 1e-9 for r in report.results)


def test_splitting_config_validation():
    base = {
        "name": "x", "setting": "splitting", "seeds": 1,
        "data": TINY["data"],
        "methods": [{"name": "baseline", "kind": "baseline"}],
    }
    with pytest.raises(ConfigError, match="trunk"):
        parse_experiment_config(base)
    with pytest.raises(ConfigError, match="at least 2 exits"):
        parse_experiment_config({**base, "trunk": {"hidden": [4], "attachments": [1]}})
