"""Logit-to-confidence transforms, temperature calibration, and ECE.

Two confidence scores are supported, both mapping a probability vector to
[0, 1] with larger meaning more confident:

* ``max_prob``: the maximum class probability.
* ``neg_entropy``: 1 - H(p) / log K, entropy normalized so a one-hot
  vector scores 1 and the uniform vector scores 0.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp, xlogy

from cascadekit.data import SCORING_METHODS, LogitTable

_LOG_T_LO = math.log(0.05)
_LOG_T_HI = math.log(20.0)
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] < 1:
        raise ValueError("softmax needs at least one class")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def max_prob(probs: np.ndarray) -> np.ndarray | float:
    p = np.asarray(probs, dtype=np.float64)
    return p.max(axis=-1)


def neg_entropy(probs: np.ndarray) -> np.ndarray | float:
    p = np.asarray(probs, dtype=np.float64)
    k = p.shape[-1]
    if k < 2:
        raise ValueError("neg_entropy needs at least 2 classes")
    h = -xlogy(p, p).sum(axis=-1) / math.log(k)
    return np.clip(1.0 - h, 0.0, 1.0)


def score(probs: np.ndarray, method: str) -> np.ndarray | float:
    """Confidence of probability vectors under the named method."""
    if method == "max_prob":
        return max_prob(probs)
    if method == "neg_entropy":
        return neg_entropy(probs)
    raise ValueError(f"unknown scoring method {method!r}, expected one of {SCORING_METHODS}")


def confidences(table: LogitTable, method: str = "max_prob") -> np.ndarray:
    """Per-row confidence of a logit table."""
    return np.atleast_1d(score(softmax(table.logits), method))


def nll(table: LogitTable, temperature: float = 1.0) -> float:
    """Mean negative log-likelihood of softmax(logits / temperature)."""
    if table.num_samples == 0:
        raise ValueError("empty table")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    z = table.logits / temperature
    lse = logsumexp(z, axis=1)
    picked = z[np.arange(table.num_samples), table.labels]
    return float(np.mean(lse - picked))


def _golden_min(f, lo: float, hi: float, tol: float) -> float:
    c = hi - _INVPHI * (hi - lo)
    d = lo + _INVPHI * (hi - lo)
    fc, fd = f(c), f(d)
    while hi - lo > tol:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INVPHI * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INVPHI * (hi - lo)
            fd = f(d)
    return 0.5 * (lo + hi)


def fit_temperature(table: LogitTable) -> float:
    """Temperature minimizing validation NLL, searched in [0.05, 20].

    A 50-point coarse grid over log T brackets the optimum, then a
    golden-section refinement narrows it to |delta log T| < 1e-4. The
    identity temperature is always scored as a candidate, so the result
    never has a worse NLL than T = 1.
    """
    if table.num_samples == 0:
        raise ValueError("cannot fit a temperature on an empty table")

    def objective(log_t: float) -> float:
        return nll(table, math.exp(log_t))

    grid = np.unique(np.append(np.linspace(_LOG_T_LO, _LOG_T_HI, 50), 0.0))
    values = [objective(g) for g in grid]
    best = int(np.argmin(values))
    lo = grid[max(0, best - 1)]
    hi = grid[min(len(grid) - 1, best + 1)]
    refined = _golden_min(objective, lo, hi, 1e-4)
    candidates = [refined, 0.0, float(grid[best])]
    best_log_t = min(candidates, key=objective)
    return math.exp(best_log_t)


def apply_temperature(table: LogitTable, temperature: float) -> LogitTable:
    """Divide logits by a positive temperature. Argmax is unchanged."""
    if not (math.isfinite(temperature) and temperature > 0):
        raise ValueError("temperature must be positive and finite")
    return table.with_logits(table.logits / temperature)


def ece(table: LogitTable, bins: int = 15) -> float:
    """Expected calibration error with equal-width max_prob bins.

    Bin b covers [b/bins, (b+1)/bins); confidence 1.0 falls in the last
    bin. Empty bins contribute nothing.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if table.num_samples == 0:
        raise ValueError("empty table")
    probs = softmax(table.logits)
    conf = np.atleast_1d(max_prob(probs))
    correct = (table.predictions == table.labels).astype(np.float64)
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    sum_conf = np.bincount(idx, weights=conf, minlength=bins)
    sum_correct = np.bincount(idx, weights=correct, minlength=bins)
    total = 0.0
    n = table.num_samples
    for b in range(bins):
        if counts[b] == 0:
            continue
        gap = abs(sum_correct[b] / counts[b] - sum_conf[b] / counts[b])
        total += counts[b] / n * gap
    return float(total)
