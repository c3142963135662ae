"""Shadow gradient/label pairs for training attack models."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .. import nn
from ..data import TRAIN, Dataset, RatioBinSpec, conditional_indices, ratio_indices
from ..release import release_gradients
from ..rng import stream

ATTACK_KINDS = ("aia", "pia", "dia", "uia")


@dataclass(frozen=True)
class AttackConfig:
    """How an attacker builds and trains its posterior model.

    ``defense`` is the mechanism the attacker applies to its own shadow
    gradients; None means a static attacker.
    """

    kind: str = "pia"
    k: int = 16
    n_pairs: int = 1000
    estimator: str = "logreg"
    reducer: dict = field(default_factory=lambda: {"kind": "maxpool", "kernel": 3})
    m: int = 2
    property_value: int = 1
    embedding_dim: int = 50
    defense: object = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")

    @property
    def adaptive(self) -> bool:
        return self.defense is not None


def adaptive_wrap(config: AttackConfig, defense) -> AttackConfig:
    """Same attack, but trained on defended shadow gradients."""
    return replace(config, defense=defense)


def user_index_table(ds: Dataset) -> tuple[np.ndarray, list[np.ndarray]]:
    users = np.unique(ds.user_ids)
    return users, [np.flatnonzero(ds.user_ids == u) for u in users]


def sample_pair_indices(shadow: Dataset, config: AttackConfig, labels: np.ndarray, rng) -> np.ndarray:
    k = config.k
    out = np.empty((labels.size, k), dtype=np.int64)
    if config.kind in ("aia", "pia"):
        for j, a in enumerate(labels):
            out[j] = conditional_indices(shadow, int(a), k, rng)
    elif config.kind == "dia":
        bins = RatioBinSpec(config.m)
        for j, a in enumerate(labels):
            alpha = bins.sample_ratio(int(a), rng)
            out[j] = ratio_indices(shadow, config.property_value, alpha, k, rng)
    else:
        _, pools = user_index_table(shadow)
        for j, u in enumerate(labels):
            pool = pools[int(u)]
            out[j] = pool[rng.integers(0, pool.size, size=k)]
    return out


def n_label_classes(shadow: Dataset, config: AttackConfig) -> int:
    if config.kind == "uia":
        return int(np.unique(shadow.user_ids).size)
    return config.m


def gen_attack_training_set(
    theta: nn.ModelParameters, shadow: Dataset, config: AttackConfig, n_pairs: int | None = None,
    seed: int = 0, classifier=None, workers: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Balanced (gradient, label) pairs computed at ``theta`` from shadow data.

    Labels are the sensitive value (AIA/PIA), the ratio bin (DIA) or the
    shadow-user index (UIA). When the config carries a defense, each shadow
    gradient is passed through it with a fresh per-pair stream.
    """
    if shadow.provenance == TRAIN:
        raise ValueError("attack models must not be trained on the private training split")
    n_pairs = config.n_pairs if n_pairs is None else n_pairs
    if n_pairs == 0:
        return np.empty((0, theta.n)), np.empty(0, dtype=np.int64)
    rng = stream(seed, "pairs")
    n_cls = n_label_classes(shadow, config)
    labels = rng.permutation(np.arange(n_pairs) % n_cls)
    idx = sample_pair_indices(shadow, config, labels, rng)
    targets = None
    if config.defense is not None and getattr(config.defense, "targeted", False) and classifier is not None:
        targets = stream(seed, "targets").integers(0, classifier.m, size=n_pairs)
    G = release_gradients(
        theta, shadow, idx, config.defense, labels=labels,
        row_stream=lambda r: stream(seed, "pair", r), classifier=classifier,
        targets=targets, workers=workers,
    )
    return G, labels
