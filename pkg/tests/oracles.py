"""Reference implementations used only by the tests.

Each one is written from first principles and shares no code with the
package: loops instead of vectorized ranks, scalar formulas instead of the
package helpers, and so on.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def pairwise_auroc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), by enumerating every pair."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def brute_tpr_at_fpr(scores, labels, target) -> float:
    """Try every threshold from the score set plus +inf."""
    best = 0.0
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    for t in list(set(scores)) + [math.inf]:
        fpr = sum(n >= t for n in neg) / len(neg)
        tpr = sum(p >= t for p in pos) / len(pos)
        if fpr <= target + 1e-12:
            best = max(best, tpr)
    return best


def cp_interval(k: int, n: int, conf: float = 0.95) -> tuple[float, float]:
    """Clopper-Pearson by root-finding the two binomial tail equations."""
    from scipy.optimize import brentq

    alpha = 1 - conf
    lo = 0.0 if k == 0 else brentq(lambda p: stats.binom.sf(k - 1, n, p) - alpha / 2, 1e-15, 1 - 1e-15)
    hi = 1.0 if k == n else brentq(lambda p: stats.binom.cdf(k, n, p) - alpha / 2, 1e-15, 1 - 1e-15)
    return lo, hi


def mlp_loss(layers, x, y) -> float:
    """Softmax cross-entropy of a ReLU MLP given as [(W, b), ...]."""
    h = np.asarray(x, dtype=np.float64)
    for i, (W, b) in enumerate(layers):
        h = W @ h + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
    z = h - h.max()
    return float(-(z[y] - math.log(np.exp(z).sum())))


def unflatten(widths, flat):
    layers, pos = [], 0
    for i in range(len(widths) - 1):
        o, n_in = widths[i + 1], widths[i]
        W = flat[pos:pos + o * n_in].reshape(o, n_in)
        pos += o * n_in
        layers.append((W, flat[pos:pos + o]))
        pos += o
    return layers


def numeric_gradient(widths, flat, x, y, h=1e-6) -> np.ndarray:
    """Central differences of the oracle loss over every parameter."""
    g = np.zeros_like(flat)
    for j in range(flat.size):
        e = np.zeros_like(flat)
        e[j] = h
        g[j] = (mlp_loss(unflatten(widths, flat + e), x, y)
                - mlp_loss(unflatten(widths, flat - e), x, y)) / (2 * h)
    return g


def linear_softmax_gradient(W, b, x, y) -> np.ndarray:
    """Closed form for one affine layer: dW = (p - e_y) x^T, db = p - e_y."""
    z = W @ x + b
    p = np.exp(z - z.max())
    p /= p.sum()
    r = p.copy()
    r[y] -= 1.0
    return np.concatenate([np.outer(r, x).ravel(), r])


def entropy_nats(p) -> float:
    return -sum(q * math.log(q) for q in p if q > 0)


def mi_by_definition(prior, T) -> float:
    """I(X;Y) = sum_xy p(x) T(y|x) log(T(y|x) / p(y)) with explicit loops."""
    ny = len(T[0])
    py = [sum(prior[x] * T[x][y] for x in range(len(prior))) for y in range(ny)]
    total = 0.0
    for x in range(len(prior)):
        for y in range(ny):
            j = prior[x] * T[x][y]
            if j > 0:
                total += j * math.log(T[x][y] / py[y])
    return total


def gaussian_dp_epsilon(clip, sigma, delta) -> float:
    return clip * math.sqrt(2 * math.log(1.25 / delta)) / sigma


def eps_point(fp, n0, fn, n1, delta, conf=0.95) -> float:
    """Epsilon at one threshold; a zero count is replaced by its upper bound."""
    fpr = fp / n0 if fp else cp_interval(0, n0, conf)[1]
    fnr = fn / n1 if fn else cp_interval(0, n1, conf)[1]
    vals = [0.0]
    for num, den in ((1 - delta - fpr, fnr), (1 - delta - fnr, fpr)):
        if num > 0:
            vals.append(math.log(num / den))
    return max(vals)


def brute_eps_hat(h0, h1, delta) -> float:
    """Max over every midpoint threshold and both rejection directions."""
    pooled = sorted(set(h0) | set(h1))
    cands = [(a + b) / 2 for a, b in zip(pooled, pooled[1:])] or pooled
    best = 0.0
    for c in cands:
        fp_g, fn_g = sum(t > c for t in h0), sum(t <= c for t in h1)
        fp_l, fn_l = sum(t < c for t in h0), sum(t >= c for t in h1)
        best = max(best, eps_point(fp_g, len(h0), fn_g, len(h1), delta),
                   eps_point(fp_l, len(h0), fn_l, len(h1), delta))
    return best


def chi_mean_mc(sigma, n, draws, rng) -> float:
    return float(np.mean(np.linalg.norm(sigma * rng.standard_normal((draws, n)), axis=1)))
