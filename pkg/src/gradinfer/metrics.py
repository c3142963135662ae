"""Attack scoring: success rate, AUROC, advantage, TPR at low FPR, and
Clopper-Pearson intervals."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class MetricsReport:
    asr: float
    auroc: float
    advantage: float
    tpr_at_1pct_fpr: float
    trials: int
    p_star: float

    def as_dict(self) -> dict:
        return asdict(self)


def asr(predictions, truths) -> float:
    predictions, truths = np.asarray(predictions), np.asarray(truths)
    if predictions.shape != truths.shape:
        raise ValueError("predictions and truths differ in length")
    if predictions.size == 0:
        raise ValueError("need at least one prediction")
    return float(np.mean(predictions == truths))


def _binary_auroc(scores, labels) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUROC needs both positive and negative examples")
    # Mann-Whitney U with midranks: tied pairs count one half.
    ranks = stats.rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc(scores, labels, macro_over_classes: bool | None = None) -> float:
    """Rank-based AUROC.

    With 1-D ``scores`` and binary ``labels`` this is the usual AUROC. With
    an (N, m) score matrix and integer labels it is the unweighted mean of
    the one-vs-rest AUROCs (for m = 2 this equals the class-1 AUROC).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        return _binary_auroc(scores, labels)
    m = scores.shape[1]
    if m == 2 and not macro_over_classes:
        return _binary_auroc(scores[:, 1], labels == 1)
    return float(np.mean([_binary_auroc(scores[:, j], labels == j) for j in range(m)]))


def advantage(p: float, p_star: float) -> float:
    """max(p - p*, 0) / (1 - p*)."""
    if not (0 <= p <= 1 and 0 <= p_star <= 1):
        raise ValueError("success rates must lie in [0, 1]")
    if p_star >= 1:
        raise ValueError("advantage is undefined for p* = 1")
    return max(p - p_star, 0.0) / (1.0 - p_star)


def _binary_tpr_at_fpr(scores, labels, fpr_target) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos, neg = scores[labels], scores[~labels]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("TPR@FPR needs both positive and negative examples")
    # Predict positive when score >= threshold; scan every distinct threshold
    # plus +inf and keep the best TPR whose FPR stays within the target.
    thresholds = np.unique(scores)
    neg_sorted, pos_sorted = np.sort(neg), np.sort(pos)
    fpr = (neg.size - np.searchsorted(neg_sorted, thresholds, side="left")) / neg.size
    tpr = (pos.size - np.searchsorted(pos_sorted, thresholds, side="left")) / pos.size
    ok = fpr <= fpr_target + 1e-12
    return float(tpr[ok].max()) if ok.any() else 0.0


def tpr_at_fpr(scores, labels, fpr_target: float = 0.01) -> float:
    """Best TPR over thresholds whose FPR is at most ``fpr_target``.

    Multi-class score matrices are macro-averaged one-vs-rest.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        return _binary_tpr_at_fpr(scores, labels, fpr_target)
    m = scores.shape[1]
    if m == 2:
        return _binary_tpr_at_fpr(scores[:, 1], labels == 1, fpr_target)
    return float(np.mean([_binary_tpr_at_fpr(scores[:, j], labels == j, fpr_target) for j in range(m)]))


def clopper_pearson(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact two-sided binomial interval from Beta quantiles."""
    if n < 1 or not 0 <= successes <= n:
        raise ValueError("need 0 <= successes <= n and n >= 1")
    tail = (1.0 - confidence) / 2.0
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(tail, successes, n - successes + 1))
    hi = 1.0 if successes == n else float(stats.beta.ppf(1 - tail, successes + 1, n - successes))
    return lo, hi


def report_from_posteriors(posteriors, truths, prior) -> MetricsReport:
    """Score a set of posterior vectors against the true values.

    Predictions take the argmax (lowest index on ties); the baseline success
    rate is the largest prior mass.
    """
    posteriors = np.asarray(posteriors, dtype=np.float64)
    truths = np.asarray(truths)
    prior = np.asarray(prior, dtype=np.float64)
    p_star = float(prior.max())
    preds = np.argmax(posteriors, axis=1)
    p = asr(preds, truths)
    m = posteriors.shape[1]
    present = np.unique(truths)
    if present.size < 2:
        auc, tpr = float("nan"), float("nan")
    elif m > 2 and present.size < m:
        # Macro averages only over classes that occur among the trials.
        auc = float(np.mean([_binary_auroc(posteriors[:, j], truths == j) for j in present]))
        tpr = float(np.mean([_binary_tpr_at_fpr(posteriors[:, j], truths == j, 0.01) for j in present]))
    else:
        auc = auroc(posteriors, truths)
        tpr = tpr_at_fpr(posteriors, truths, 0.01)
    return MetricsReport(p, auc, advantage(p, p_star), tpr, int(truths.size), p_star)
