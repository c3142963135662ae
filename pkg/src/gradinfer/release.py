"""Compute batch gradients at given parameters and pass them through a
defense mechanism, many batches at a time.

Rows are processed in fixed-size chunks. Any randomness a row needs (VIB
latent noise, DP-SGD noise) comes from that row's own stream, so the output
does not depend on chunking or on the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

from . import nn
from .data import Dataset
from .defenses import DPSGD, AdvPerturb, Identity, Prune, Sign, adv_perturb, dpsgd, prune, sign

RowStream = Callable[[int], np.random.Generator]

_CHUNK_ELEMS = 4_000_000


def _chunk_rows(n_rows: int, k: int, n: int, per_sample: bool) -> int:
    per_row = k * n if per_sample else n
    return max(1, min(n_rows, _CHUNK_ELEMS // max(1, per_row)))


def release_gradients(
    params: nn.ModelParameters,
    ds: Dataset,
    idx: np.ndarray,
    defense=None,
    labels: np.ndarray | None = None,
    row_stream: RowStream | None = None,
    classifier=None,
    targets: np.ndarray | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Released gradient for every batch of record indices.

    Args:
        idx: (G, k) indices into ``ds``; row g is one batch.
        defense: mechanism applied to each batch gradient (None = identity).
        labels: per-row true sensitive value (untargeted perturbation).
        row_stream: ``row_stream(g)`` gives row g's generator; required for
            VIB networks and DP-SGD.
        classifier: defender's classifier for adversarial perturbation.
        targets: per-row target values for targeted perturbation.

    Returns:
        (G, n) array of released gradients.
    """
    defense = defense or Identity()
    idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
    G, k = idx.shape
    spec = params.spec
    needs_noise = spec.vib is not None or (isinstance(defense, DPSGD) and defense.sigma > 0)
    if needs_noise and row_stream is None:
        raise ValueError("this network/defense needs per-row random streams")
    per_sample = isinstance(defense, DPSGD)
    size = _chunk_rows(G, k, params.n, per_sample)
    starts = list(range(0, G, size))

    def work(start):
        rows = np.arange(start, min(G, start + size))
        X = ds.X[idx[rows]]
        Y = ds.y[idx[rows]]
        gens = [row_stream(int(r)) for r in rows] if needs_noise else None
        xi = None
        if spec.vib is not None:
            xi = np.stack([g.standard_normal((k, spec.vib.latent_dim)) for g in gens])
        if per_sample:
            ps = nn.grouped_per_sample_gradients(params, X, Y, xi)
            out = np.stack([dpsgd(ps[j], defense.clip, defense.sigma, gens[j] if gens else None) for j in range(rows.size)])
        else:
            out = nn.grouped_gradients(params, X, Y, xi)
        if isinstance(defense, Prune):
            out = prune(out, defense.rate)
        elif isinstance(defense, Sign):
            out = sign(out)
        elif isinstance(defense, AdvPerturb):
            if classifier is None:
                raise ValueError("adversarial perturbation needs the defender's classifier")
            out = adv_perturb(
                out, None if labels is None else np.asarray(labels)[rows], classifier,
                defense.gamma, defense.step, defense.iters, defense.targeted,
                None if targets is None else np.asarray(targets)[rows],
            )
        return out

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts, axis=0)
