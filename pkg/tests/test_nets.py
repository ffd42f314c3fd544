"""Toy MLP mechanics: wiring checks, mac counting, serialization, grads."""

import numpy as np
import numpy.testing as npt
import pytest

from cascadekit.errors import FormatError
from cascadekit.nets import (
    NET_FORMAT_VERSION,
    ToyNet,
    count_macs,
    exit_macs,
    forward,
    load_net,
    loss_and_grads,
    make_mlp,
    make_multi_exit,
    net_fingerprint,
    params_of,
    rebuild,
    save_net,
)
from cascadekit.training import LossSpec


def _toy(seed=0, hidden=(8,), attachments=None, input_dim=2, classes=4):
    rng = np.random.default_rng(seed)
    if attachments is None:
        return make_mlp(input_dim, hidden, classes, rng)
    return make_multi_exit(input_dim, hidden, classes, attachments, rng)


def test_single_exit_mac_count():
    # [2 -> 8 -> 4]: 16 trunk macs + 32 head macs
    net = _toy()
    assert count_macs(net) == 48
    assert exit_macs(net) == (48,)


def test_multi_exit_macs_cumulative_and_increasing():
    net = _toy(hidden=(8, 8), attachments=(1, 2))
    # exit 0: 2*8 + 8*4 = 48; exit 1 adds the second trunk layer and its head
    assert exit_macs(net) == (48, 48 + 64 + 32)
    assert all(a < b for a, b in zip(exit_macs(net), exit_macs(net)[1:]))
    assert count_macs(net) == exit_macs(net)[-1]


def test_attachments_do_not_change_trunk_draws():
    deep = _toy(seed=3, hidden=(8, 8), attachments=(1, 2))
    last_only = _toy(seed=3, hidden=(8, 8), attachments=(2,))
    for a, b in zip(deep.trunk_w, last_only.trunk_w):
        npt.assert_array_equal(a, b)


def test_multi_exit_first_head_matches_prefix_net():
    net = _toy(seed=4, hidden=(6, 8), attachments=(1, 2))
    prefix = ToyNet(
        input_dim=net.input_dim,
        num_classes=net.num_classes,
        trunk_w=(net.trunk_w[0],),
        trunk_b=(net.trunk_b[0],),
        exit_attach=(1,),
        exit_w=(net.exit_w[0],),
        exit_b=(net.exit_b[0],),
    )
    x = np.random.default_rng(5).normal(size=(16, 2))
    full = forward(net, x)
    assert len(full) == 2
    npt.assert_array_equal(full[0], forward(prefix, x)[0])


def test_forward_validates_input_shape():
    net = _toy()
    with pytest.raises(ValueError, match="input shape"):
        forward(net, np.zeros((4, 3)))


def test_parameters_are_frozen():
    net = _toy()
    with pytest.raises(ValueError):
        net.trunk_w[0][0, 0] = 1.0


def test_wiring_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="1..L"):
        make_multi_exit(2, (8, 8), 4, (0, 2), rng)
    with pytest.raises(ValueError, match="cover the last"):
        make_multi_exit(2, (8, 8), 4, (1,), rng)
    with pytest.raises(ValueError, match="strictly increasing"):
        make_multi_exit(2, (8, 8), 4, (2, 2), rng)
    with pytest.raises(ValueError, match="hidden"):
        make_mlp(2, (), 4, rng)
    good = _toy()
    with pytest.raises(ValueError, match="trunk layer 0"):
        ToyNet(
            input_dim=3,
            num_classes=4,
            trunk_w=good.trunk_w,
            trunk_b=good.trunk_b,
            exit_attach=good.exit_attach,
            exit_w=good.exit_w,
            exit_b=good.exit_b,
        )


def test_save_load_round_trip_is_bit_exact(tmp_path):
    net = _toy(seed=9, hidden=(5, 7), attachments=(1, 2))
    path = tmp_path / "net.json"
    save_net(net, path)
    back = load_net(path)
    assert back.exit_attach == net.exit_attach
    assert back.input_dim == net.input_dim
    assert back.num_classes == net.num_classes
    for a, b in zip(params_of(net), params_of(back)):
        npt.assert_array_equal(a, b)
    assert net_fingerprint(back) == net_fingerprint(net)


def test_load_rejects_bad_files(tmp_path):
    with pytest.raises(FormatError, match="not found"):
        load_net(tmp_path / "none.json")
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(FormatError, match="JSON"):
        load_net(p)
    p.write_text('{"format_version": 999}')
    with pytest.raises(FormatError, match=f"version {NET_FORMAT_VERSION}"):
        load_net(p)
    p.write_text('{"format_version": 1, "input_dim": 2}')
    with pytest.raises(FormatError, match="malformed"):
        load_net(p)


def test_params_rebuild_round_trip():
    net = _toy(seed=2)
    params = params_of(net)
    same = rebuild(net, params)
    x = np.random.default_rng(1).normal(size=(8, 2))
    npt.assert_array_equal(forward(same, x)[0], forward(net, x)[0])
    params[0] = params[0] + 1.0
    moved = rebuild(net, params)
    assert not np.array_equal(forward(moved, x)[0], forward(net, x)[0])
    with pytest.raises(ValueError, match="layout"):
        rebuild(net, params[:-1])


def test_fingerprint_tracks_parameters():
    a = _toy(seed=1)
    b = _toy(seed=1)
    assert net_fingerprint(a) == net_fingerprint(b)
    params = params_of(a)
    params[-1] = params[-1] + 1e-9
    assert net_fingerprint(rebuild(a, params)) != net_fingerprint(a)


def test_org_loss_is_sum_of_exit_cross_entropies():
    net = _toy(seed=6, hidden=(6, 6), attachments=(1, 2))
    rng = np.random.default_rng(7)
    x = rng.normal(size=(12, 2))
    y = rng.integers(0, 4, 12)
    breakdown, _ = loss_and_grads(net, x, y, LossSpec(kind="org_only"))
    want = 0.0
    for z in forward(net, x):
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        want += -np.mean(logp[np.arange(12), y])
    assert breakdown.l_org == pytest.approx(want, rel=1e-12)
    assert breakdown.l_casc == 0.0
    assert breakdown.total == breakdown.l_org


def test_cascade_loss_needs_frozen_correctness_on_single_exit():
    net = _toy()
    x = np.zeros((4, 2))
    y = np.zeros(4, dtype=np.int64)
    with pytest.raises(ValueError, match="later-stage"):
        loss_and_grads(net, x, y, LossSpec(kind="cascade", weight=1.0))


def _fd_grads(net, x, y, spec, exp_correct=None, h=1e-6):
    """Central finite differences over every parameter entry."""
    base = params_of(net)
    out = []
    for pi in range(len(base)):
        g = np.zeros_like(base[pi])
        it = np.nditer(base[pi], flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            vals = []
            for sgn in (1.0, -1.0):
                params = [p.copy() for p in base]
                params[pi][idx] += sgn * h
                b, _ = loss_and_grads(rebuild(net, params), x, y, spec, exp_correct)
                vals.append(b.total)
            g[idx] = (vals[0] - vals[1]) / (2 * h)
        out.append(g)
    return out


def _separated_batch(net, rng, n):
    """A batch whose exit argmaxes are stable under 1e-6 perturbations."""
    while True:
        x = rng.normal(size=(n, net.input_dim))
        y = rng.integers(0, net.num_classes, n)
        ok = True
        for z in forward(net, x):
            part = np.partition(z, -2, axis=1)
            if np.min(part[:, -1] - part[:, -2]) < 1e-3:
                ok = False
        if ok:
            return x, y


@pytest.mark.parametrize(
    "hidden,attachments,kind,weight",
    [
        ((5,), None, "org_only", 0.0),
        ((5,), None, "cascade", 2.0),
        ((4, 5), (1, 2), "org_only", 0.0),
        ((4, 5), (1, 2), "cascade", 2.0),
    ],
)
def test_grads_match_finite_differences(hidden, attachments, kind, weight):
    net = _toy(seed=11, hidden=hidden, attachments=attachments, input_dim=3, classes=3)
    rng = np.random.default_rng(12)
    x, y = _separated_batch(net, rng, 6)
    spec = LossSpec(kind=kind, weight=weight, cost=0.5)
    exp_correct = None
    if kind == "cascade" and net.num_exits == 1:
        exp_correct = rng.integers(0, 2, 6).astype(bool)
    _, grads = loss_and_grads(net, x, y, spec, exp_correct)
    fd = _fd_grads(net, x, y, spec, exp_correct)
    assert len(grads) == len(fd) == len(params_of(net))
    for a, b in zip(grads, fd):
        rel = np.abs(a - b) / np.maximum(1e-6, np.maximum(np.abs(a), np.abs(b)))
        assert rel.max() < 1e-4
