"""SGD loop contracts: determinism, the weight-0 identity, schedules."""

import numpy as np
import numpy.testing as npt
import pytest

from cascadekit.nets import loss_and_grads, make_mlp, make_multi_exit, params_of
from cascadekit.training import (
    CorrectnessCache,
    EpochStats,
    LossSpec,
    TrainConfig,
    accuracy,
    learning_rate,
    train,
)


def _blobs(rng, n_per=60, spread=0.4):
    """Three well-separated gaussian blobs in the plane."""
    means = np.array([[0.0, 0.0], [6.0, 6.0], [-6.0, 6.0]])
    x = np.concatenate([rng.normal(m, spread, size=(n_per, 2)) for m in means])
    y = np.repeat(np.arange(3), n_per)
    return x, y


def _fresh(seed=0, classes=3):
    return make_mlp(2, (8,), classes, np.random.default_rng(seed))


FAST_CONFIG = TrainConfig(epochs=4, batch_size=32, decay_epochs=(2, 3), seed=5)


def test_training_is_deterministic():
    rng = np.random.default_rng(1)
    x, y = _blobs(rng)
    a, stats_a = train(_fresh(), x, y, FAST_CONFIG)
    b, stats_b = train(_fresh(), x, y, FAST_CONFIG)
    for pa, pb in zip(params_of(a), params_of(b)):
        npt.assert_array_equal(pa, pb)
    assert stats_a == stats_b


def test_weight_zero_reproduces_plain_training_bit_for_bit():
    rng = np.random.default_rng(2)
    x, y = _blobs(rng)
    exp_correct = rng.integers(0, 2, len(y)).astype(bool)
    plain, plain_stats = train(_fresh(), x, y, FAST_CONFIG, LossSpec(kind="org_only"))
    joint, joint_stats = train(
        _fresh(), x, y, FAST_CONFIG, LossSpec(kind="cascade", weight=0.0), exp_correct
    )
    for pa, pb in zip(params_of(plain), params_of(joint)):
        npt.assert_array_equal(pa, pb)
    # the confidence term is still measured, it just cannot steer
    for sp, sj in zip(plain_stats, joint_stats):
        assert sp.loss_total == sj.loss_total
        assert sp.loss_org == sj.loss_org
    assert joint_stats[-1].loss_casc > 0.0
    assert plain_stats[-1].loss_casc == 0.0


def test_weight_zero_identity_holds_for_multi_exit_nets():
    rng = np.random.default_rng(3)
    x, y = _blobs(rng)

    def fresh():
        return make_multi_exit(2, (6, 6), 3, (1, 2), np.random.default_rng(7))

    plain, _ = train(fresh(), x, y, FAST_CONFIG, LossSpec(kind="org_only"))
    joint, _ = train(fresh(), x, y, FAST_CONFIG, LossSpec(kind="cascade", weight=0.0))
    for pa, pb in zip(params_of(plain), params_of(joint)):
        npt.assert_array_equal(pa, pb)


def test_positive_weight_changes_the_result():
    rng = np.random.default_rng(4)
    x, y = _blobs(rng)
    exp_correct = np.ones(len(y), dtype=bool)
    plain, _ = train(_fresh(), x, y, FAST_CONFIG)
    joint, _ = train(
        _fresh(), x, y, FAST_CONFIG, LossSpec(kind="cascade", weight=4.0), exp_correct
    )
    assert any(
        not np.array_equal(pa, pb) for pa, pb in zip(params_of(plain), params_of(joint))
    )


def test_single_full_batch_step_is_exactly_sgd():
    rng = np.random.default_rng(5)
    x, y = _blobs(rng, n_per=10)
    net = _fresh()
    config = TrainConfig(
        epochs=1, batch_size=len(y), lr=0.05, momentum=0.0, weight_decay=0.0,
        decay_epochs=(), seed=0,
    )
    before = params_of(net)
    # the loop shuffles even a single full batch; mirror it for bit equality
    perm = np.random.default_rng(config.seed).permutation(len(y))
    _, grads = loss_and_grads(net, x[perm], y[perm], LossSpec(kind="org_only"))
    after, _ = train(net, x, y, config)
    for p0, g, p1 in zip(before, grads, params_of(after)):
        npt.assert_array_equal(p1, p0 - 0.05 * g)


def test_epoch_stats_shape_and_schedule():
    rng = np.random.default_rng(6)
    x, y = _blobs(rng, n_per=20)
    config = TrainConfig(epochs=6, batch_size=16, lr=0.1, lr_decay=0.2, decay_epochs=(2, 4), seed=1)
    _, stats = train(_fresh(), x, y, config)
    assert len(stats) == 6
    assert [s.epoch for s in stats] == list(range(6))
    assert all(isinstance(s, EpochStats) for s in stats)
    for s in stats:
        assert s.lr == learning_rate(config, s.epoch)
    assert stats[0].lr == 0.1
    assert stats[2].lr == pytest.approx(0.02)
    assert stats[4].lr == pytest.approx(0.004)


def test_learning_rate_step_decay():
    config = TrainConfig(lr=1.0, lr_decay=0.5, decay_epochs=(3,))
    assert learning_rate(config, 0) == 1.0
    assert learning_rate(config, 2) == 1.0
    assert learning_rate(config, 3) == 0.5
    assert learning_rate(config, 99) == 0.5


def test_cascade_loss_requires_aligned_exp_correct():
    rng = np.random.default_rng(7)
    x, y = _blobs(rng, n_per=5)
    with pytest.raises(ValueError, match="exp_correct"):
        train(_fresh(), x, y, FAST_CONFIG, LossSpec(kind="cascade", weight=1.0))
    with pytest.raises(ValueError, match="align"):
        train(
            _fresh(), x, y, FAST_CONFIG,
            LossSpec(kind="cascade", weight=1.0), np.ones(3, dtype=bool),
        )


def test_train_rejects_empty_or_misaligned_data():
    with pytest.raises(ValueError, match="non-empty"):
        train(_fresh(), np.zeros((0, 2)), np.zeros(0, dtype=int), FAST_CONFIG)
    with pytest.raises(ValueError, match="aligned"):
        train(_fresh(), np.zeros((4, 2)), np.zeros(3, dtype=int), FAST_CONFIG)


def test_config_validation():
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="lr "):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError, match="lr_decay"):
        TrainConfig(lr_decay=0.0)
    with pytest.raises(ValueError, match="momentum"):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError, match="weight_decay"):
        TrainConfig(weight_decay=-1.0)
    with pytest.raises(ValueError, match="batch_size"):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError, match="loss kind"):
        LossSpec(kind="hinge")


def test_converges_on_separable_blobs():
    rng = np.random.default_rng(8)
    x, y = _blobs(rng)
    config = TrainConfig(epochs=30, batch_size=32, decay_epochs=(20, 26), seed=2)
    net, stats = train(_fresh(), x, y, config)
    assert stats[-1].loss_org < 0.05
    assert accuracy(net, x, y) == 1.0
    # loss history is recorded every epoch, trending down overall
    assert stats[-1].loss_org < stats[0].loss_org


def test_correctness_cache_keys_on_net_and_data():
    rng = np.random.default_rng(9)
    x, y = _blobs(rng, n_per=10)
    cache = CorrectnessCache()
    net = _fresh()
    first = cache.correctness(net, x, y)
    again = cache.correctness(net, x, y)
    assert cache.hits == 1 and cache.misses == 1
    npt.assert_array_equal(first, again)
    assert not first.flags.writeable
    # a different net or different data misses
    cache.correctness(_fresh(seed=3), x, y)
    cache.correctness(net, x + 1.0, y)
    assert cache.misses == 3
