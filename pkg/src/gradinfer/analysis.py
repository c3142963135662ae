"""Fano-type bounds relating mutual information to inference error.

Everything is in nats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def binary_entropy(e: float) -> float:
    if e <= 0 or e >= 1:
        return 0.0
    return -e * math.log(e) - (1 - e) * math.log(1 - e)


@dataclass(frozen=True)
class DiscreteChannel:
    """Prior over inputs and a row-stochastic matrix P(Y = y | X = x)."""

    prior: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        prior = np.asarray(self.prior, dtype=np.float64)
        T = np.asarray(self.transition, dtype=np.float64)
        if T.ndim != 2 or T.shape[0] != prior.size:
            raise ValueError("transition must be |X| x |Y|")
        if np.any(prior < 0) or abs(prior.sum() - 1) > 1e-9:
            raise ValueError("prior must sum to 1")
        if np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1) > 1e-9):
            raise ValueError("transition rows must sum to 1")
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "transition", T)

    @property
    def joint(self) -> np.ndarray:
        return self.prior[:, None] * self.transition

    def bayes_error(self) -> float:
        """Error of the MAP estimator, by enumeration over outputs."""
        return float(1.0 - self.joint.max(axis=0).sum())

    def posterior(self) -> np.ndarray:
        """P(X | Y) as a |Y| x |X| matrix (uniform where P(Y=y) = 0)."""
        J = self.joint.T
        py = J.sum(axis=1, keepdims=True)
        return np.where(py > 0, J / np.where(py > 0, py, 1.0), 1.0 / self.prior.size)

    @classmethod
    def random(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "DiscreteChannel":
        prior = rng.dirichlet(np.ones(n_in))
        T = rng.dirichlet(np.ones(n_out), size=n_in)
        return cls(prior, T)


def mutual_information_exact(ch: DiscreteChannel) -> float:
    J = ch.joint
    py = J.sum(axis=0)
    outer = ch.prior[:, None] * py[None, :]
    mask = J > 0
    return float(np.sum(J[mask] * np.log(J[mask] / outer[mask])))


def fano_binary_numeric(h_cond: float, tol: float = 1e-12) -> float:
    """Smallest e in [0, 1/2] with H2(e) >= h_cond, by bisection."""
    if h_cond <= 0:
        return 0.0
    if h_cond >= LN2:
        return 0.5
    lo, hi = 0.0, 0.5
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if binary_entropy(mid) >= h_cond:
            hi = mid
        else:
            lo = mid
    return hi


def fano_error_lower_bound(h_x: float, mi: float, m: int) -> float:
    """Lower bound on P(error) for any estimator of an m-ary variable.

    For m > 2 this is max(0, (H(X) - I - ln 2) / ln(m - 1)); the bound is
    vacuous at m = 2, where the binary form is solved numerically instead.
    """
    if m < 2:
        raise ValueError("alphabet size must be >= 2")
    if m == 2:
        return fano_binary_numeric(max(0.0, h_x - mi))
    return max(0.0, (h_x - mi - LN2) / math.log(m - 1))


def advantage_upper_bound(h_a: float, mi: float, m: int, p_star: float) -> float:
    if m <= 2:
        raise ValueError("the advantage bound needs m > 2")
    if p_star >= 1:
        raise ValueError("p_star must be < 1")
    bound = 1.0 - (h_a - mi - LN2) / ((1.0 - p_star) * math.log(m - 1))
    return min(1.0, max(0.0, bound))


def gaussian_capacity_bound(power: float, sigma: float, classical: bool = False) -> float:
    """0.5 * ln(1 + P / sigma).

    ``classical=True`` uses the textbook signal-to-noise ratio P / sigma^2.
    """
    if power < 0 or sigma <= 0:
        raise ValueError("need power >= 0 and sigma > 0")
    snr = power / (sigma * sigma) if classical else power / sigma
    return 0.5 * math.log1p(snr)


def mi_proxy_from_classifier(model, eval_inputs, eval_labels, prior) -> float:
    """H(prior) minus the model's mean cross-entropy on held-out pairs, floored at 0.

    ``model`` is anything exposing ``predict_proba(inputs) -> (N, m)``.
    """
    probs = np.asarray(model.predict_proba(eval_inputs), dtype=np.float64)
    labels = np.asarray(eval_labels, dtype=np.int64)
    if labels.size == 0:
        raise ValueError("need at least one evaluation pair")
    ce = -np.mean(np.log(np.maximum(probs[np.arange(labels.size), labels], 1e-300)))
    return max(0.0, entropy(prior) - ce)
