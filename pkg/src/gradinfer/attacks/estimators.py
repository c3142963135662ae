"""Small softmax networks fitted by L-BFGS.

``hidden=()`` is multinomial logistic regression; one hidden ReLU layer
gives the MLP posterior model. The user-inference encoder is the same class
with a linear embedding layer ahead of the classification head.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


class SoftmaxNet:
    """Dense classifier on standardized inputs.

    Args:
        hidden: hidden layer widths.
        linear_last_hidden: leave the last hidden layer without activation
            (used as an embedding).
        l2: weight decay on weight matrices (not biases).
        seed: initialization seed.
        max_iter: L-BFGS iteration cap.
    """

    def __init__(self, hidden=(), linear_last_hidden=False, l2=1e-3, seed=0, max_iter=300):
        self.hidden = tuple(int(h) for h in hidden)
        self.linear_last_hidden = linear_last_hidden
        self.l2 = l2
        self.seed = seed
        self.max_iter = max_iter
        self.shapes = None

    def _unpack(self, theta):
        out, pos = [], 0
        for o, i in self.shapes:
            W = theta[pos:pos + o * i].reshape(o, i)
            pos += o * i
            out.append((W, theta[pos:pos + o]))
            pos += o
        return out

    def _relu_layer(self, l):
        n_hidden = len(self.shapes) - 1
        return l < n_hidden and not (self.linear_last_hidden and l == n_hidden - 1)

    def _forward(self, theta, Z):
        acts, pre = [Z], []
        h = Z
        for l, (W, b) in enumerate(self._unpack(theta)):
            z = h @ W.T + b
            pre.append(z)
            h = np.maximum(z, 0.0) if self._relu_layer(l) else z
            acts.append(h)
        return acts, pre

    def _loss_grad(self, theta, Z, y):
        acts, pre = self._forward(theta, Z)
        logp = _log_softmax(acts[-1])
        N = Z.shape[0]
        loss = -logp[np.arange(N), y].mean()
        delta = np.exp(logp)
        delta[np.arange(N), y] -= 1.0
        delta /= N
        layers = self._unpack(theta)
        grads = [None] * len(layers)
        for l in range(len(layers) - 1, -1, -1):
            W, _ = layers[l]
            grads[l] = (delta.T @ acts[l] + self.l2 * W, delta.sum(axis=0))
            loss += 0.5 * self.l2 * np.sum(W * W)
            if l > 0:
                delta = delta @ W
                if self._relu_layer(l - 1):
                    delta = delta * (pre[l - 1] > 0)
        flat = np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])
        return loss, flat

    def fit(self, X, y, n_classes: int | None = None) -> "SoftmaxNet":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.int64)
        self.n_classes = int(n_classes or y.max() + 1)
        self.mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.scale_ = np.where(std > 1e-12, std, 1.0)
        Z = (X - self.mean_) / self.scale_
        widths = (X.shape[1],) + self.hidden + (self.n_classes,)
        self.shapes = [(widths[i + 1], widths[i]) for i in range(len(widths) - 1)]
        rng = np.random.default_rng(self.seed)
        parts = []
        for l, (o, i) in enumerate(self.shapes):
            if l == len(self.shapes) - 1 and not self.hidden:
                parts.append(np.zeros(o * i))
            else:
                parts.append(rng.standard_normal(o * i) * np.sqrt(2.0 / i))
            parts.append(np.zeros(o))
        res = minimize(
            self._loss_grad, np.concatenate(parts), args=(Z, y), jac=True,
            method="L-BFGS-B", options={"maxiter": self.max_iter},
        )
        self.theta_ = res.x
        return self

    def _standardize(self, X):
        return (np.atleast_2d(np.asarray(X, dtype=np.float64)) - self.mean_) / self.scale_

    def logits(self, X) -> np.ndarray:
        acts, _ = self._forward(self.theta_, self._standardize(X))
        return acts[-1]

    def embed(self, X) -> np.ndarray:
        """Output of the last hidden layer."""
        acts, _ = self._forward(self.theta_, self._standardize(X))
        return acts[-2]

    def predict_proba(self, X) -> np.ndarray:
        return np.exp(_log_softmax(self.logits(X)))

    def input_gradient(self, X, labels) -> np.ndarray:
        """Gradient of per-row cross-entropy with respect to the raw input rows."""
        Z = self._standardize(X)
        acts, pre = self._forward(self.theta_, Z)
        delta = np.exp(_log_softmax(acts[-1]))
        delta[np.arange(Z.shape[0]), np.asarray(labels, dtype=np.int64)] -= 1.0
        layers = self._unpack(self.theta_)
        for l in range(len(layers) - 1, -1, -1):
            delta = delta @ layers[l][0]
            if l > 0 and self._relu_layer(l - 1):
                delta = delta * (pre[l - 1] > 0)
        return delta / self.scale_


def make_estimator(kind: str, seed: int = 0, hidden: int = 64, l2: float | None = None) -> SoftmaxNet:
    if kind in ("logreg", "logistic"):
        return SoftmaxNet((), l2=1e-2 if l2 is None else l2, seed=seed)
    if kind == "mlp":
        return SoftmaxNet((hidden,), l2=1e-2 if l2 is None else l2, seed=seed)
    raise ValueError(f"unknown estimator {kind!r}; choose 'logreg' or 'mlp'")
