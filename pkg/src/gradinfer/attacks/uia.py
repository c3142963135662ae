"""User inference: a prototypical-style gradient encoder and the
distance-based posterior over candidate users."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .. import nn
from .estimators import SoftmaxNet


@dataclass
class UserEncoder:
    reducer: object
    net: SoftmaxNet
    embedding_dim: int

    def embed(self, G) -> np.ndarray:
        single = np.ndim(G) == 1
        out = self.net.embed(self.reducer.transform(np.atleast_2d(G)))
        return out[0] if single else out


def train_uia_encoder(
    G, user_labels, embedding_dim: int = 50, reducer=None, hidden: int = 128, seed: int = 0,
    l2: float = 1e-3,
) -> UserEncoder:
    """Fit encoder + linear head on shadow users with cross-entropy; keep the encoder."""
    from .reducers import MaxPool

    labels = np.asarray(user_labels, dtype=np.int64)
    n_users = np.unique(labels).size
    if n_users < 2:
        raise ValueError("user inference needs at least 2 shadow users")
    red = copy.deepcopy(reducer if reducer is not None else MaxPool(3)).fit(G)
    net = SoftmaxNet((hidden, embedding_dim), linear_last_hidden=True, l2=l2, seed=seed)
    net.fit(red.transform(np.atleast_2d(G)), labels, n_classes=int(labels.max() + 1))
    return UserEncoder(red, net, embedding_dim)


def posterior_from_embeddings(observed_emb, candidate_embs) -> np.ndarray:
    """softmax over candidates of -||e_i - e_obs||_2.

    Shapes: (e,) with (m, e), or (N, e) with (N, m, e).
    """
    obs = np.asarray(observed_emb, dtype=np.float64)
    cand = np.asarray(candidate_embs, dtype=np.float64)
    dist = np.linalg.norm(cand - obs[..., None, :], axis=-1)
    z = -dist
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def uia_posterior_from_gradients(encoder: UserEncoder, g_observed, candidate_grads) -> np.ndarray:
    g_observed = np.asarray(g_observed)
    candidate_grads = np.asarray(candidate_grads)
    if candidate_grads.shape[-2] < 2:
        raise ValueError("need at least 2 candidates")
    obs = encoder.embed(np.atleast_2d(g_observed))
    flat = candidate_grads.reshape(-1, candidate_grads.shape[-1])
    cand = encoder.embed(flat).reshape(candidate_grads.shape[:-1] + (-1,))
    if g_observed.ndim == 1:
        return posterior_from_embeddings(obs[0], cand)
    return posterior_from_embeddings(obs, cand)


def uia_posterior(encoder: UserEncoder, g_observed, candidate_batches, theta: nn.ModelParameters) -> np.ndarray:
    """Candidate gradients are computed at ``theta`` from each candidate batch."""
    grads = np.stack([nn.loss_and_gradient(theta, b)[1] for b in candidate_batches])
    return uia_posterior_from_gradients(encoder, g_observed, grads)
