"""Posterior models P(a | g), ordinal recombination and multi-round
Bayesian aggregation."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .estimators import SoftmaxNet, make_estimator

LOG_FLOOR = 1e-12


@dataclass
class PosteriorModel:
    """Reducer followed by a softmax estimator over ``m`` sensitive values."""

    reducer: object
    estimator: SoftmaxNet
    m: int
    round_index: int | None = None
    defended: bool = False

    def predict(self, G) -> np.ndarray:
        single = np.ndim(G) == 1
        feats = self.reducer.transform(np.atleast_2d(G))
        probs = self.estimator.predict_proba(feats)
        probs = probs / probs.sum(axis=1, keepdims=True)
        return probs[0] if single else probs

    predict_proba = predict

    def loss_input_gradient(self, G, labels) -> np.ndarray:
        """d CE / d G through the reducer, for adversarial perturbation."""
        G = np.atleast_2d(G)
        feats = self.reducer.transform(G)
        return self.reducer.backward(G, self.estimator.input_gradient(feats, labels))


def train_posterior(
    G, labels, reducer, estimator_kind: str = "logreg", m: int | None = None, seed: int = 0,
    round_index: int | None = None, defended: bool = False,
) -> PosteriorModel:
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if np.unique(labels).size < 2:
        raise ValueError("posterior training needs at least two classes")
    m = int(m or labels.max() + 1)
    red = copy.deepcopy(reducer).fit(G)
    est = make_estimator(estimator_kind, seed=seed).fit(red.transform(G), labels, n_classes=m)
    return PosteriorModel(red, est, m, round_index, defended)


def predict_posterior(model, g) -> np.ndarray:
    return model.predict(g)


def ordinal_posterior(scores) -> np.ndarray:
    """Combine exceedance probabilities into a distribution over m bins.

    ``scores[..., i]`` estimates P(a > i) for bins 0..m-1 (so i = 0..m-2).
    Negative masses from non-monotone scores are clamped to zero and the
    result renormalized; an all-zero result falls back to uniform.
    """
    s = np.asarray(scores, dtype=np.float64)
    single = s.ndim == 1
    s = np.atleast_2d(s)
    ones = np.ones(s.shape[:-1] + (1,))
    zeros = np.zeros(s.shape[:-1] + (1,))
    upper = np.concatenate([ones, s], axis=-1)
    lower = np.concatenate([s, zeros], axis=-1)
    p = upper - lower
    if np.any(p < 0):
        p = np.maximum(p, 0.0)
        total = p.sum(axis=-1, keepdims=True)
        m = p.shape[-1]
        p = np.where(total > 0, p / np.where(total > 0, total, 1.0), 1.0 / m)
    return p[0] if single else p


@dataclass
class OrdinalModel:
    """m - 1 binary models; model i estimates P(a > i | g)."""

    binaries: list[PosteriorModel]
    round_index: int | None = None
    defended: bool = False

    def __post_init__(self):
        if len(self.binaries) < 2:
            raise ValueError("ordinal models need m >= 3 bins")

    @property
    def m(self) -> int:
        return len(self.binaries) + 1

    def exceedance(self, G) -> np.ndarray:
        return np.stack([b.predict(np.atleast_2d(G))[:, 1] for b in self.binaries], axis=1)

    def predict(self, G) -> np.ndarray:
        single = np.ndim(G) == 1
        p = ordinal_posterior(self.exceedance(G))
        return p[0] if single else p

    predict_proba = predict


def train_ordinal(
    G, labels, m: int, reducer, estimator_kind: str = "logreg", seed: int = 0,
    round_index: int | None = None, defended: bool = False,
) -> OrdinalModel:
    labels = np.asarray(labels, dtype=np.int64)
    binaries = [
        train_posterior(G, (labels > i).astype(np.int64), reducer, estimator_kind, 2, seed + i)
        for i in range(m - 1)
    ]
    return OrdinalModel(binaries, round_index, defended)


def prior_correct(balanced_posterior, prior) -> np.ndarray:
    """Turn a balanced-training posterior (proportional to the likelihood)
    into a posterior under ``prior``."""
    p = np.asarray(balanced_posterior, dtype=np.float64) * np.asarray(prior, dtype=np.float64)
    return p / p.sum(axis=-1, keepdims=True)


def multi_round_aggregate(round_posteriors, prior) -> tuple[np.ndarray, np.ndarray]:
    """Aggregate per-round posteriors assuming conditional independence given a.

    score(a) = sum_i log P_i(a | g_i) - (|R| - 1) log P(a), dropping the
    a-independent constant. Posteriors are floored at 1e-12 before the log.

    Args:
        round_posteriors: (R, m) for one trial or (R, N, m) for N trials.
        prior: (m,) strictly positive on its support.

    Returns:
        (a_hat, scores) where ties in the argmax go to the lowest index.
    """
    P = np.asarray(round_posteriors, dtype=np.float64)
    if P.shape[0] < 1:
        raise ValueError("need at least one observed round")
    prior = np.asarray(prior, dtype=np.float64)
    R = P.shape[0]
    scores = np.log(np.maximum(P, LOG_FLOOR)).sum(axis=0) - (R - 1) * np.log(np.maximum(prior, LOG_FLOOR))
    return np.argmax(scores, axis=-1), scores


def normalize_scores(scores) -> np.ndarray:
    """Softmax of log-scores: the aggregated posterior."""
    s = np.asarray(scores, dtype=np.float64)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)
