"""Fully-connected ReLU networks with exact per-sample gradients.

Parameters live in one flat float64 vector. The canonical layout, shared by
every gradient in the package, is::

    layer 0 weights (out x in, row-major), layer 0 biases, layer 1 weights, ...

A network with a VIB layer inserts a Gaussian bottleneck before the output
layer: the last hidden activation feeds a linear layer producing
``(mu, logvar)`` of size ``2 * latent_dim``, a latent is sampled as
``mu + exp(logvar / 2) * xi`` and a linear decoder maps it to the logits.
The per-sample loss is softmax cross-entropy plus ``beta * KL(N(mu, var) || N(0, I))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VIBConfig:
    latent_dim: int
    beta: float = 0.01

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths from input dimension to number of classes."""

    layer_widths: tuple[int, ...]
    vib: VIBConfig | None = None
    init_seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ValueError("a network needs at least 2 layer widths")
        if any(w < 1 for w in widths):
            raise ValueError("all layer widths must be >= 1")

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def n_classes(self) -> int:
        return self.layer_widths[-1]

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(out, in) of every affine layer in canonical order."""
        w = self.layer_widths
        if self.vib is None:
            return [(w[i + 1], w[i]) for i in range(len(w) - 1)]
        latent = self.vib.latent_dim
        hidden = [(w[i + 1], w[i]) for i in range(len(w) - 2)]
        return hidden + [(2 * latent, w[-2]), (w[-1], latent)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())


@dataclass(frozen=True)
class ModelParameters:
    spec: NetworkSpec
    flat: np.ndarray = field(repr=False)

    def __post_init__(self):
        flat = np.array(self.flat, dtype=np.float64, copy=True)
        if flat.shape != (self.spec.n_params,):
            raise ValueError(
                f"expected {self.spec.n_params} parameters, got shape {flat.shape}"
            )
        if not np.all(np.isfinite(flat)):
            raise ValueError("parameters must be finite")
        flat.setflags(write=False)
        object.__setattr__(self, "flat", flat)

    @property
    def n(self) -> int:
        return self.flat.size

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Read-only (W, b) views in canonical order."""
        out = []
        pos = 0
        for o, i in self.spec.layer_shapes():
            W = self.flat[pos:pos + o * i].reshape(o, i)
            pos += o * i
            b = self.flat[pos:pos + o]
            pos += o
            out.append((W, b))
        return out


@dataclass(frozen=True)
class Batch:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        y = np.atleast_1d(np.asarray(self.y, dtype=np.int64))
        if X.shape[0] < 1:
            raise ValueError("a batch needs at least one sample")
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y disagree on batch size")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def k(self) -> int:
        return self.X.shape[0]

    @classmethod
    def from_pairs(cls, pairs) -> "Batch":
        xs, ys = zip(*pairs)
        return cls(np.stack([np.asarray(x, dtype=np.float64) for x in xs]), np.array(ys))


def init_network(spec: NetworkSpec) -> ModelParameters:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    rng = np.random.default_rng(spec.init_seed)
    parts = []
    for o, i in spec.layer_shapes():
        parts.append(rng.standard_normal(o * i) / np.sqrt(i))
        parts.append(np.zeros(o))
    return ModelParameters(spec, np.concatenate(parts))


def draw_latent_noise(spec: NetworkSpec, shape, rng: np.random.Generator) -> np.ndarray | None:
    """Standard normal reparameterization noise, or None for plain networks."""
    if spec.vib is None:
        return None
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    return rng.standard_normal(shape + (spec.vib.latent_dim,))


def _check_inputs(params: ModelParameters, X: np.ndarray, y: np.ndarray | None = None):
    if X.shape[-1] != params.spec.input_dim:
        raise ValueError(
            f"feature dimension {X.shape[-1]} != network input {params.spec.input_dim}"
        )
    if y is not None:
        c = params.spec.n_classes
        if y.size and (y.min() < 0 or y.max() >= c):
            raise ValueError(f"labels must lie in [0, {c})")


def _resolve_xi(spec, B, rng, xi):
    if spec.vib is None:
        return None
    if xi is not None:
        xi = np.asarray(xi, dtype=np.float64).reshape(B, spec.vib.latent_dim)
        return xi
    if rng is None:
        return np.zeros((B, spec.vib.latent_dim))
    return rng.standard_normal((B, spec.vib.latent_dim))


def _forward_cache(params, X, xi):
    spec = params.spec
    layers = params.layers()
    n_hidden = len(layers) - (2 if spec.vib else 1)
    inputs, pre = [], []
    h = X
    for W, b in layers[:n_hidden]:
        inputs.append(h)
        z = h @ W.T + b
        pre.append(z)
        h = np.maximum(z, 0.0)
    cache = {"inputs": inputs, "pre": pre, "n_hidden": n_hidden}
    if spec.vib is None:
        W, b = layers[-1]
        inputs.append(h)
        logits = h @ W.T + b
        kl = np.zeros(X.shape[0])
    else:
        L = spec.vib.latent_dim
        (We, be), (Wd, bd) = layers[-2], layers[-1]
        inputs.append(h)
        stats = h @ We.T + be
        mu, logvar = stats[:, :L], stats[:, L:]
        std = np.exp(0.5 * logvar)
        latent = mu + std * xi
        inputs.append(latent)
        logits = latent @ Wd.T + bd
        kl = 0.5 * np.sum(mu * mu + std * std - logvar - 1.0, axis=1)
        cache.update(mu=mu, logvar=logvar, std=std, xi=xi)
    cache["logits"] = logits
    cache["kl"] = kl
    return cache


def _log_softmax(logits):
    shift = logits - logits.max(axis=1, keepdims=True)
    return shift - np.log(np.exp(shift).sum(axis=1, keepdims=True))


def _per_sample_loss_and_deltas(params, X, y, xi):
    """Per-sample losses and, per layer, (delta, layer input) with B rows each.

    delta_l is d loss_i / d pre-activation_l for sample i, so the per-sample
    weight gradient is outer(delta_l[i], input_l[i]).
    """
    spec = params.spec
    layers = params.layers()
    cache = _forward_cache(params, X, xi)
    logp = _log_softmax(cache["logits"])
    B = X.shape[0]
    rows = np.arange(B)
    ce = -logp[rows, y]
    dlogits = np.exp(logp)
    dlogits[rows, y] -= 1.0

    deltas = [None] * len(layers)
    deltas[-1] = dlogits
    if spec.vib is None:
        loss = ce
        upstream = dlogits @ layers[-1][0]
        first_hidden_back = len(layers) - 2
    else:
        beta = spec.vib.beta
        loss = ce + beta * cache["kl"]
        dlatent = dlogits @ layers[-1][0]
        dmu = dlatent + beta * cache["mu"]
        dlogvar = dlatent * cache["xi"] * 0.5 * cache["std"] + beta * 0.5 * (cache["std"] ** 2 - 1.0)
        deltas[-2] = np.concatenate([dmu, dlogvar], axis=1)
        upstream = deltas[-2] @ layers[-2][0]
        first_hidden_back = len(layers) - 3
    for l in range(first_hidden_back, -1, -1):
        delta = upstream * (cache["pre"][l] > 0)
        deltas[l] = delta
        if l > 0:
            upstream = delta @ layers[l][0]
    return loss, list(zip(deltas, cache["inputs"]))


def forward(params: ModelParameters, x, rng: np.random.Generator | None = None, xi=None) -> np.ndarray:
    """Logits for one sample (1-D input) or a stack of samples (2-D input).

    For VIB networks the latent noise comes from ``xi`` if given, else from
    ``rng``; with neither, the latent mean is used.
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    _check_inputs(params, X)
    noise = _resolve_xi(params.spec, X.shape[0], rng, xi)
    logits = _forward_cache(params, X, noise)["logits"]
    return logits[0] if single else logits


def predict_proba(params: ModelParameters, X, rng=None) -> np.ndarray:
    logits = forward(params, np.atleast_2d(X), rng=rng)
    return np.exp(_log_softmax(logits))


def per_sample_gradients(params: ModelParameters, batch: Batch, rng=None, xi=None) -> np.ndarray:
    """Row i is the exact gradient of the loss on sample i alone; shape (k, n)."""
    _check_inputs(params, batch.X, batch.y)
    noise = _resolve_xi(params.spec, batch.k, rng, xi)
    _, parts = _per_sample_loss_and_deltas(params, batch.X, batch.y, noise)
    cols = []
    for delta, inp in parts:
        cols.append((delta[:, :, None] * inp[:, None, :]).reshape(batch.k, -1))
        cols.append(delta)
    return np.concatenate(cols, axis=1)


def loss_and_gradient(params: ModelParameters, batch: Batch, rng=None, xi=None) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and its exact gradient."""
    _check_inputs(params, batch.X, batch.y)
    noise = _resolve_xi(params.spec, batch.k, rng, xi)
    loss, parts = _per_sample_loss_and_deltas(params, batch.X, batch.y, noise)
    k = batch.k
    cols = []
    for delta, inp in parts:
        cols.append((delta.T @ inp).ravel() / k)
        cols.append(delta.mean(axis=0))
    return float(loss.mean()), np.concatenate(cols)


def grouped_gradients(params: ModelParameters, X: np.ndarray, Y: np.ndarray, xi=None) -> np.ndarray:
    """Mean-loss gradients for G batches at once.

    Args:
        X: (G, k, d) features; Y: (G, k) labels; xi: optional (G, k, latent).

    Returns:
        (G, n) array; row g equals ``loss_and_gradient`` on batch g.
    """
    G, k, d = X.shape
    _check_inputs(params, X.reshape(G * k, d), Y.reshape(-1))
    flat_xi = _resolve_xi(params.spec, G * k, None, None if xi is None else xi.reshape(G * k, -1))
    _, parts = _per_sample_loss_and_deltas(params, X.reshape(G * k, d), Y.reshape(-1), flat_xi)
    cols = []
    for delta, inp in parts:
        dg = delta.reshape(G, k, -1)
        ig = inp.reshape(G, k, -1)
        cols.append(np.einsum("gko,gki->goi", dg, ig).reshape(G, -1) / k)
        cols.append(dg.mean(axis=1))
    return np.concatenate(cols, axis=1)


def grouped_per_sample_gradients(params: ModelParameters, X: np.ndarray, Y: np.ndarray, xi=None) -> np.ndarray:
    """(G, k, n) per-sample gradients for G batches."""
    G, k, d = X.shape
    flat = per_sample_gradients(
        params, Batch(X.reshape(G * k, d), Y.reshape(-1)),
        xi=None if xi is None else xi.reshape(G * k, -1),
    )
    return flat.reshape(G, k, -1)


def sgd_step(params: ModelParameters, g, lr: float) -> ModelParameters:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != params.flat.shape:
        raise ValueError(f"gradient length {g.size} != parameter count {params.n}")
    return ModelParameters(params.spec, params.flat - lr * g)


def _batch_loss(params, batch, xi):
    loss, _ = _per_sample_loss_and_deltas(params, batch.X, batch.y, xi)
    return float(loss.mean())


def finite_difference_check(params: ModelParameters, batch: Batch, step: float = 1e-5, xi=None,
                            floor: float = 1e-6) -> float:
    """Max over coordinates of |analytic - fd| / max(|analytic|, |fd|, floor).

    The central difference carries round-off near eps * |loss| / step (about
    1e-11 at the default step), so entries below ``floor`` are effectively
    compared in absolute terms rather than amplifying that noise.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    noise = _resolve_xi(params.spec, batch.k, None, xi)
    _, g = loss_and_gradient(params, batch, xi=noise)
    base = params.flat.copy()
    worst = 0.0
    for i in range(base.size):
        orig = base[i]
        base[i] = orig + step
        up = _batch_loss(ModelParameters(params.spec, base), batch, noise)
        base[i] = orig - step
        down = _batch_loss(ModelParameters(params.spec, base), batch, noise)
        base[i] = orig
        fd = (up - down) / (2.0 * step)
        worst = max(worst, abs(fd - g[i]) / max(abs(g[i]), abs(fd), floor))
    return worst
