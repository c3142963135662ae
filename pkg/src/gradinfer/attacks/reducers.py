"""Dimensionality reduction applied to gradients before an attack model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MaxPool:
    """Non-overlapping 1-D max pooling (stride = kernel); a short last window
    is pooled as-is."""

    kernel: int = 3

    def __post_init__(self):
        if self.kernel < 1:
            raise ValueError("kernel must be >= 1")

    def fit(self, G) -> "MaxPool":
        return self

    def _windows(self, G):
        G = np.atleast_2d(np.asarray(G, dtype=np.float64))
        n = G.shape[1]
        n_out = -(-n // self.kernel)
        pad = n_out * self.kernel - n
        if pad:
            G = np.concatenate([G, np.full((G.shape[0], pad), -np.inf)], axis=1)
        return G.reshape(G.shape[0], n_out, self.kernel), n

    def transform(self, G) -> np.ndarray:
        single = np.ndim(G) == 1
        W, _ = self._windows(G)
        out = W.max(axis=2)
        return out[0] if single else out

    def backward(self, G, grad_features) -> np.ndarray:
        """Route feature gradients to the (first) maximal entry of each window."""
        W, n = self._windows(G)
        grad_features = np.atleast_2d(grad_features)
        arg = W.argmax(axis=2)
        out = np.zeros_like(W)
        np.put_along_axis(out, arg[:, :, None], grad_features[:, :, None], axis=2)
        return out.reshape(W.shape[0], -1)[:, :n]


@dataclass
class PCA:
    """Projection onto the leading principal directions of the fitting set."""

    dims: int = 50
    mean_: np.ndarray | None = field(default=None, repr=False)
    components_: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError("dims must be >= 1")

    def fit(self, G) -> "PCA":
        G = np.atleast_2d(np.asarray(G, dtype=np.float64))
        self.mean_ = G.mean(axis=0)
        _, _, vt = np.linalg.svd(G - self.mean_, full_matrices=False)
        k = min(self.dims, vt.shape[0])
        # Fix each component's sign so refits on identical data agree exactly.
        comps = vt[:k]
        flip = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
        self.components_ = comps * flip[:, None]
        return self

    def _check(self):
        if self.components_ is None:
            raise RuntimeError("PCA reducer used before fitting")

    def transform(self, G) -> np.ndarray:
        self._check()
        single = np.ndim(G) == 1
        out = (np.atleast_2d(G) - self.mean_) @ self.components_.T
        return out[0] if single else out

    def backward(self, G, grad_features) -> np.ndarray:
        self._check()
        return np.atleast_2d(grad_features) @ self.components_


def reducer_from_dict(cfg: dict | None):
    cfg = dict(cfg or {"kind": "maxpool", "kernel": 3})
    kind = cfg.pop("kind", "maxpool")
    if kind == "maxpool":
        return MaxPool(**cfg)
    if kind == "pca":
        return PCA(**cfg)
    raise ValueError(f"unknown reducer {kind!r}")


def reduce(g, reducer) -> np.ndarray:
    return reducer.transform(g)
