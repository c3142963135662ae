"""Gradient-release mechanisms applied before the adversary sees a gradient.

All functions accept either one gradient (1-D) or a stack of gradients
(2-D, one per row) and return the same shape.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Protocol, Union

import numpy as np


@dataclass(frozen=True)
class Identity:
    name = "identity"


@dataclass(frozen=True)
class Prune:
    rate: float = 0.99
    name = "prune"

    def __post_init__(self):
        if not 0 <= self.rate <= 1:
            raise ValueError("prune rate must lie in [0, 1]")


@dataclass(frozen=True)
class Sign:
    name = "sign"


@dataclass(frozen=True)
class AdvPerturb:
    gamma: float = 0.005
    step: float = 0.002
    iters: int = 5
    targeted: bool = False
    name = "adv_perturb"

    def __post_init__(self):
        if self.gamma <= 0 or self.step <= 0:
            raise ValueError("gamma and step must be positive")
        if self.iters < 0:
            raise ValueError("iters must be >= 0")


@dataclass(frozen=True)
class VIB:
    """Training-time defense: swaps in a VIB network; released gradients stay raw."""

    beta: float = 0.01
    latent_dim: int = 16
    name = "vib"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class DPSGD:
    clip: float = 2.0
    sigma: float = 0.1
    name = "dpsgd"

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")


DefenseMechanism = Union[Identity, Prune, Sign, AdvPerturb, VIB, DPSGD]
_KINDS = {cls.name: cls for cls in (Identity, Prune, Sign, AdvPerturb, VIB, DPSGD)}


def defense_from_dict(cfg: dict) -> DefenseMechanism:
    cfg = dict(cfg)
    kind = cfg.pop("kind", "identity")
    if kind not in _KINDS:
        raise ValueError(f"unknown defense kind {kind!r}; choose from {sorted(_KINDS)}")
    return _KINDS[kind](**cfg)


def defense_to_dict(defense: DefenseMechanism) -> dict:
    return {"kind": defense.name, **asdict(defense)}


def defense_label(defense: DefenseMechanism) -> str:
    params = ",".join(f"{k}={v}" for k, v in asdict(defense).items())
    return f"{defense.name}({params})" if params else defense.name


# Privacy-utility sweep profiles.
SWEEP_PROFILES: dict[str, list[DefenseMechanism]] = {
    "prune": [Prune(0.90), Prune(0.95), Prune(0.99)],
    "adv_perturb": [AdvPerturb(5e-4, 2e-4), AdvPerturb(1e-3, 3e-4), AdvPerturb(5e-3, 2e-3)],
    "vib": [VIB(1e-1), VIB(1e-2), VIB(1e-3)],
    "dpsgd": [DPSGD(2.0, 1e-1), DPSGD(2.0, 2e-2), DPSGD(2.0, 1e-2)],
}


# ------------------------------------------------------------------ mechanisms


def apply_identity(g: np.ndarray) -> np.ndarray:
    return g


def prune(g, rate: float) -> np.ndarray:
    """Zero the ceil(rate * n) smallest-magnitude entries of each gradient.

    Ties go to the lower index first (stable sort on magnitude).
    """
    g = np.asarray(g, dtype=np.float64)
    if not 0 <= rate <= 1:
        raise ValueError("prune rate must lie in [0, 1]")
    rows = np.atleast_2d(g)
    n = rows.shape[1]
    n_zero = min(n, int(math.ceil(rate * n - 1e-9)))
    out = rows.copy()
    if n_zero:
        order = np.argsort(np.abs(rows), axis=1, kind="stable")[:, :n_zero]
        np.put_along_axis(out, order, 0.0, axis=1)
    return out.reshape(g.shape)


def sign(g) -> np.ndarray:
    """Elementwise sign with sign(0) = 0."""
    return np.sign(np.asarray(g, dtype=np.float64))


class InputGradientClassifier(Protocol):
    """What adversarial perturbation needs from the defender's classifier."""

    def loss_input_gradient(self, G: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """d CE(f(G_i), labels_i) / d G_i for each row."""


def adv_perturb(
    g, a, classifier: InputGradientClassifier, gamma: float = 0.005, step: float = 0.002,
    iters: int = 5, targeted: bool = False, a_target=None,
) -> np.ndarray:
    """l_inf-bounded PGD against the defender's sensitive-value classifier.

    Untargeted runs ascend the loss on the true value ``a``; targeted runs
    descend the loss on ``a_target``. Each iteration makes one batched query
    to ``classifier``.
    """
    g = np.asarray(g, dtype=np.float64)
    rows = np.atleast_2d(g)
    labels = np.atleast_1d(np.asarray(a_target if targeted else a, dtype=np.int64))
    if labels.size == 1 and rows.shape[0] > 1:
        labels = np.repeat(labels, rows.shape[0])
    direction = -1.0 if targeted else 1.0
    lo, hi = rows - gamma, rows + gamma
    cur = rows.copy()
    for _ in range(iters):
        grad = classifier.loss_input_gradient(cur, labels)
        cur = _project_linf(np.clip(cur + direction * step * np.sign(grad), lo, hi), rows, gamma)
    return cur.reshape(g.shape)


def _project_linf(cur: np.ndarray, center: np.ndarray, gamma: float) -> np.ndarray:
    """Step entries toward ``center`` until |cur - center| <= gamma holds in floats."""
    bad = np.abs(cur - center) > gamma
    while np.any(bad):
        cur[bad] = np.nextafter(cur[bad], center[bad])
        bad = np.abs(cur - center) > gamma
    return cur


def clip_rows(G: np.ndarray, clip: float) -> np.ndarray:
    """Scale each row by 1 / max(1, ||row|| / clip)."""
    norms = np.linalg.norm(G, axis=-1, keepdims=True)
    out = G / np.maximum(1.0, norms / clip)
    # Division can leave a norm one ulp above the clip; shrink those rows.
    shrink = np.nextafter(1.0, 0.0)
    over = np.linalg.norm(out, axis=-1) > clip
    while np.any(over):
        out[over] *= shrink
        over = np.linalg.norm(out, axis=-1) > clip
    return out


def dpsgd(per_sample, clip: float, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Clip each per-sample gradient to norm ``clip``, add N(0, sigma^2 I) to
    each, and average.

    Noise is drawn per sample exactly as in the usual displayed DP-SGD
    update; this is distributionally the same as a single N(0, sigma^2/k I)
    draw added to the mean of the clipped gradients.

    Args:
        per_sample: (k, n) per-sample gradients, or (G, k, n) for G batches.
    """
    ps = np.asarray(per_sample, dtype=np.float64)
    if ps.shape[-2] < 1:
        raise ValueError("need at least one per-sample gradient")
    clipped = clip_rows(ps, clip)
    if sigma > 0:
        clipped = clipped + sigma * rng.standard_normal(ps.shape)
    return clipped.mean(axis=-2)


def theoretical_epsilon(clip: float, sigma: float, delta: float) -> float:
    """Per-step epsilon of the Gaussian mechanism with l2 sensitivity ``clip``."""
    if sigma <= 0:
        raise ValueError("epsilon is undefined for sigma <= 0")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return clip * math.sqrt(2.0 * math.log(1.25 / delta)) / sigma
