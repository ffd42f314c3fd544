"""Small fully-connected nets with one or more classifier exits.

Everything is float64 numpy: forward, backward, and the update rule are
spelled out so gradients can be checked against finite differences and
training is bit-reproducible for a fixed seed.

A net is a ReLU trunk plus one linear head per exit. Exit m attaches
after trunk layer attach[m] (1-based); the last exit must sit on the last
trunk layer so no dead layers exist. MACs count one multiply-accumulate
per weight in a matrix product; biases and activations are free.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from cascadekit.errors import FormatError
from cascadekit.loss import grad_conf_batch
from cascadekit.util import array_fingerprint, atomic_write_text

NET_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ToyNet:
    input_dim: int
    num_classes: int
    trunk_w: tuple[np.ndarray, ...]
    trunk_b: tuple[np.ndarray, ...]
    exit_attach: tuple[int, ...]
    exit_w: tuple[np.ndarray, ...]
    exit_b: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2:
            raise ValueError("need input_dim >= 1 and num_classes >= 2")
        # copies, not views: locking a view would freeze the caller's array
        tw = tuple(np.array(w, dtype=np.float64) for w in self.trunk_w)
        tb = tuple(np.array(b, dtype=np.float64) for b in self.trunk_b)
        ew = tuple(np.array(w, dtype=np.float64) for w in self.exit_w)
        eb = tuple(np.array(b, dtype=np.float64) for b in self.exit_b)
        if not tw or len(tw) != len(tb):
            raise ValueError("trunk weights and biases must pair up")
        if not self.exit_attach or not (len(self.exit_attach) == len(ew) == len(eb)):
            raise ValueError("exit attachments, weights, and biases must pair up")
        fan_in = self.input_dim
        for i, (w, b) in enumerate(zip(tw, tb)):
            if w.ndim != 2 or w.shape[0] != fan_in:
                raise ValueError(f"trunk layer {i}: expected shape ({fan_in}, *), got {w.shape}")
            if b.shape != (w.shape[1],):
                raise ValueError(f"trunk layer {i}: bias shape {b.shape} does not match")
            fan_in = w.shape[1]
        attach = tuple(int(a) for a in self.exit_attach)
        if list(attach) != sorted(set(attach)):
            raise ValueError("exit attachments must be strictly increasing")
        if attach[0] < 1 or attach[-1] != len(tw):
            raise ValueError("exits must attach to trunk layers 1..L and cover the last layer")
        for m, (a, w, b) in enumerate(zip(attach, ew, eb)):
            width = tw[a - 1].shape[1]
            if w.shape != (width, self.num_classes):
                raise ValueError(f"exit {m}: expected shape ({width}, {self.num_classes}), got {w.shape}")
            if b.shape != (self.num_classes,):
                raise ValueError(f"exit {m}: bias shape {b.shape} does not match")
        for arr in tw + tb + ew + eb:
            arr.flags.writeable = False
        object.__setattr__(self, "trunk_w", tw)
        object.__setattr__(self, "trunk_b", tb)
        object.__setattr__(self, "exit_attach", attach)
        object.__setattr__(self, "exit_w", ew)
        object.__setattr__(self, "exit_b", eb)

    @property
    def hidden_sizes(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.trunk_w)

    @property
    def num_exits(self) -> int:
        return len(self.exit_attach)


def make_mlp(input_dim: int, hidden, num_classes: int, rng: np.random.Generator) -> ToyNet:
    """Single-exit MLP with the given hidden widths."""
    hidden = tuple(int(h) for h in hidden)
    if not hidden:
        raise ValueError("need at least one hidden layer")
    return make_multi_exit(input_dim, hidden, num_classes, (len(hidden),), rng)


def make_multi_exit(
    input_dim: int, hidden, num_classes: int, attachments, rng: np.random.Generator
) -> ToyNet:
    """Shared-trunk net with one exit head per attachment point."""
    hidden = tuple(int(h) for h in hidden)
    attachments = tuple(int(a) for a in attachments)
    trunk_w, trunk_b = [], []
    fan_in = input_dim
    for width in hidden:
        trunk_w.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width)))
        trunk_b.append(np.zeros(width))
        fan_in = width
    exit_w, exit_b = [], []
    for a in attachments:
        width = hidden[a - 1]
        exit_w.append(rng.normal(0.0, np.sqrt(1.0 / width), size=(width, num_classes)))
        exit_b.append(np.zeros(num_classes))
    return ToyNet(
        input_dim=input_dim,
        num_classes=num_classes,
        trunk_w=tuple(trunk_w),
        trunk_b=tuple(trunk_b),
        exit_attach=attachments,
        exit_w=tuple(exit_w),
        exit_b=tuple(exit_b),
    )


def forward(net: ToyNet, x: np.ndarray) -> list[np.ndarray]:
    """Logits of every exit for a batch; the trunk is computed once."""
    return _forward_acts(net, x)[1]


def _forward_acts(net: ToyNet, x: np.ndarray):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"expected input shape (*, {net.input_dim}), got {x.shape}")
    acts = [x]
    for w, b in zip(net.trunk_w, net.trunk_b):
        acts.append(np.maximum(acts[-1] @ w + b, 0.0))
    logits = [acts[a] @ w + b for a, w, b in zip(net.exit_attach, net.exit_w, net.exit_b)]
    return acts, logits


def exit_macs(net: ToyNet) -> tuple[int, ...]:
    """Cumulative multiply-accumulate count to produce each exit's logits.

    Reaching exit m runs the trunk up to its attachment plus every head
    at or before m, since earlier heads were needed to decide to go on.
    """
    trunk = [w.shape[0] * w.shape[1] for w in net.trunk_w]
    heads = [w.shape[0] * w.shape[1] for w in net.exit_w]
    out = []
    for m, a in enumerate(net.exit_attach):
        out.append(sum(trunk[:a]) + sum(heads[: m + 1]))
    return tuple(out)


def count_macs(net: ToyNet) -> int:
    """Multiply-accumulates per sample for a full forward pass."""
    return exit_macs(net)[-1]


def net_fingerprint(net: ToyNet) -> str:
    return array_fingerprint(*net.trunk_w, *net.trunk_b, *net.exit_w, *net.exit_b)


def save_net(net: ToyNet, path) -> None:
    doc = {
        "format_version": NET_FORMAT_VERSION,
        "input_dim": net.input_dim,
        "num_classes": net.num_classes,
        "hidden": list(net.hidden_sizes),
        "exit_attach": list(net.exit_attach),
        "trunk_w": [w.tolist() for w in net.trunk_w],
        "trunk_b": [b.tolist() for b in net.trunk_b],
        "exit_w": [w.tolist() for w in net.exit_w],
        "exit_b": [b.tolist() for b in net.exit_b],
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_net(path) -> ToyNet:
    from pathlib import Path

    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FormatError(f"net file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format_version") != NET_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported net format (expected version {NET_FORMAT_VERSION})")
    try:
        return ToyNet(
            input_dim=int(doc["input_dim"]),
            num_classes=int(doc["num_classes"]),
            trunk_w=tuple(np.array(w, dtype=np.float64) for w in doc["trunk_w"]),
            trunk_b=tuple(np.array(b, dtype=np.float64) for b in doc["trunk_b"]),
            exit_attach=tuple(doc["exit_attach"]),
            exit_w=tuple(np.array(w, dtype=np.float64) for w in doc["exit_w"]),
            exit_b=tuple(np.array(b, dtype=np.float64) for b in doc["exit_b"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed net document ({exc})") from None


def params_of(net: ToyNet) -> list[np.ndarray]:
    """Writable copies of all parameters in a fixed order."""
    return [np.array(a) for a in (*net.trunk_w, *net.trunk_b, *net.exit_w, *net.exit_b)]


def rebuild(net: ToyNet, params: list[np.ndarray]) -> ToyNet:
    """A net with the same wiring but the given parameter values."""
    lt = len(net.trunk_w)
    le = len(net.exit_w)
    if len(params) != 2 * lt + 2 * le:
        raise ValueError("parameter list does not match the net's layout")
    return ToyNet(
        input_dim=net.input_dim,
        num_classes=net.num_classes,
        trunk_w=tuple(params[:lt]),
        trunk_b=tuple(params[lt : 2 * lt]),
        exit_attach=net.exit_attach,
        exit_w=tuple(params[2 * lt : 2 * lt + le]),
        exit_b=tuple(params[2 * lt + le :]),
    )


def _log_softmax(z: np.ndarray) -> np.ndarray:
    return z - logsumexp(z, axis=1, keepdims=True)


def loss_and_grads(net, x, y, loss_spec, exp_correct=None):
    """Loss breakdown and parameter gradients for one batch.

    loss_spec is a training.LossSpec. For the cascade loss on a
    single-exit net, exp_correct must give the frozen correctness of the
    later stage per batch sample; multi-exit nets take their pair
    indicators from their own exits, recomputed each call and treated as
    constants. Gradients follow the parameter order of params_of.
    """
    from cascadekit.loss import joint_loss

    y = np.asarray(y, dtype=np.int64)
    batch = len(y)
    if batch == 0:
        raise ValueError("empty batch")
    acts, logits = _forward_acts(net, x)
    rows = np.arange(batch)

    log_p = [_log_softmax(z) for z in logits]
    probs = [np.exp(lp) for lp in log_p]
    ce = [float(-np.mean(lp[rows, y])) for lp in log_p]
    l_org = float(sum(ce))
    grad_logits = [(p - _onehot(y, net.num_classes)) / batch for p in probs]

    l_casc = 0.0
    if loss_spec.kind == "cascade":
        w = loss_spec.weight
        correct = [np.argmax(z, axis=1) == y for z in logits]
        if net.num_exits == 1:
            if exp_correct is None:
                raise ValueError("cascade loss on a single-exit net needs frozen later-stage correctness")
            exp_correct = np.asarray(exp_correct, dtype=bool)
            if exp_correct.shape != (batch,):
                raise ValueError("exp_correct must align with the batch")
            pairs = [(correct[0], exp_correct)]
            conf_exits = [0]
        else:
            pairs = [(correct[m], correct[m + 1]) for m in range(net.num_exits - 1)]
            conf_exits = list(range(net.num_exits - 1))
        for m, (fast_ok, exp_ok) in zip(conf_exits, pairs):
            p = probs[m]
            top = np.argmax(logits[m], axis=1)
            conf = p[rows, top]
            fw = 1.0 - fast_ok.astype(np.float64)
            ew = 1.0 - exp_ok.astype(np.float64)
            l_casc += float(np.mean(conf * fw + (1.0 - conf) * (ew + loss_spec.cost)))
            slope = grad_conf_batch(fast_ok, exp_ok, loss_spec.cost)
            # d conf / d z with the argmax index frozen: p_top * (onehot(top) - p)
            coeff = slope * conf / batch
            g = -coeff[:, None] * p
            g[rows, top] += coeff
            grad_logits[m] = grad_logits[m] + w * g
        breakdown = joint_loss(l_org, l_casc, w)
    elif loss_spec.kind == "org_only":
        breakdown = joint_loss(l_org, 0.0, 0.0)
    else:
        raise ValueError(f"unknown loss kind {loss_spec.kind!r}")

    grads = _backward(net, acts, grad_logits)
    return breakdown, grads


def _onehot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(y), k))
    out[np.arange(len(y)), y] = 1.0
    return out


def _backward(net: ToyNet, acts, grad_logits):
    """Backpropagate per-exit logit gradients into all parameters."""
    lt = len(net.trunk_w)
    d_act = [np.zeros_like(acts[i + 1]) for i in range(lt)]
    g_exit_w, g_exit_b = [], []
    for a, w, g in zip(net.exit_attach, net.exit_w, grad_logits):
        g_exit_w.append(acts[a].T @ g)
        g_exit_b.append(g.sum(axis=0))
        d_act[a - 1] += g @ w.T
    g_trunk_w = [None] * lt
    g_trunk_b = [None] * lt
    for layer in range(lt - 1, -1, -1):
        dz = d_act[layer] * (acts[layer + 1] > 0.0)
        g_trunk_w[layer] = acts[layer].T @ dz
        g_trunk_b[layer] = dz.sum(axis=0)
        if layer > 0:
            d_act[layer - 1] += dz @ net.trunk_w[layer].T
    return [*g_trunk_w, *g_trunk_b, *g_exit_w, *g_exit_b]
