"""Per-attribute privacy audit of one clipped, noised gradient step.

The auditor knows a record completely except for one attribute. Under H0
the record keeps its attribute value; under H1 the value is replaced by a
different one. The released gradient is the clipped single-record gradient
plus N(0, sigma^2 I) noise, and the test statistic is its distance to the
clipped H0 gradient. Empirical epsilon comes from the FPR/FNR trade-off of
thresholding that statistic.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import nn
from .defenses import clip_rows, theoretical_epsilon
from .metrics import clopper_pearson
from .rng import stream


@dataclass(frozen=True)
class AttributeSpec:
    """Where the audited attribute lives in the feature vector.

    With ``one_hot`` the slots hold an indicator group of length m; otherwise
    a single slot holds the value index itself.
    """

    slots: tuple[int, ...]
    m: int
    one_hot: bool = True

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(int(s) for s in self.slots))
        if self.m < 2:
            raise ValueError("the audited attribute needs m >= 2 values")
        if self.one_hot and len(self.slots) != self.m:
            raise ValueError("a one-hot attribute needs one slot per value")
        if not self.one_hot and len(self.slots) != 1:
            raise ValueError("a scalar attribute occupies exactly one slot")

    def encode(self, z, value: int) -> np.ndarray:
        x = np.array(z, dtype=np.float64)
        if not 0 <= value < self.m:
            raise ValueError(f"attribute value {value} outside [0, {self.m})")
        if self.one_hot:
            x[..., list(self.slots)] = np.eye(self.m)[value]
        else:
            x[..., self.slots[0]] = float(value)
        return x

    def free_slots(self, d: int) -> np.ndarray:
        return np.setdiff1d(np.arange(d), self.slots)


@dataclass(frozen=True)
class AuditConfig:
    clip: float = 2.0
    sigma: float = 0.1
    delta: float = 1e-5
    trials: int = 5000
    attribute: AttributeSpec = field(default_factory=lambda: AttributeSpec((20, 21), 2))
    seed: int = 0
    sensitivity_factor: float = 1.0
    confidence: float = 0.95
    workers: int = 1

    def __post_init__(self):
        errs = self.validate()
        if errs:
            raise ValueError("; ".join(errs))

    def validate(self) -> list[str]:
        errs = []
        if self.trials < 100:
            errs.append("trials must be >= 100")
        if not 0 < self.delta < 1:
            errs.append("delta must lie in (0, 1)")
        if self.clip <= 0:
            errs.append("clip must be positive")
        if self.sigma < 0:
            errs.append("sigma must be >= 0")
        if self.sensitivity_factor not in (1, 2, 1.0, 2.0):
            errs.append("sensitivity_factor must be 1 or 2")
        return errs


@dataclass(frozen=True)
class CanaryRecord:
    """A full feature vector, its attribute value and label, and how it was made."""

    z: np.ndarray
    a: int
    y: int
    distance: str = "mse"
    iters: int = 0
    step: float = 0.0
    trace: tuple[float, ...] = ()

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if not np.all(np.isfinite(z)):
            raise ValueError("canary features must be finite")
        object.__setattr__(self, "z", z)


@dataclass(frozen=True)
class AuditSamples:
    h0: np.ndarray
    h1: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class EpsilonEstimate:
    eps_hat: float
    lo: float
    hi: float
    threshold: float
    direction: str
    fpr: float
    fnr: float
    analytic_eps: float | None = None
    n_attributes: int | None = None
    degenerate: bool = False


# ---------------------------------------------------------------- the game


def clipped_gradients(theta: nn.ModelParameters, X, y: int, clip: float) -> np.ndarray:
    """Clipped single-record gradients, one row per row of ``X``."""
    X = np.atleast_2d(X)
    ps = nn.per_sample_gradients(theta, nn.Batch(X, np.full(X.shape[0], y)))
    return clip_rows(ps, clip)


def hypothesis_gradients(theta, record: CanaryRecord, config: AuditConfig) -> np.ndarray:
    """(m, n) clipped gradients of the record under every attribute value."""
    attr = config.attribute
    X = np.stack([attr.encode(record.z, v) for v in range(attr.m)])
    return clipped_gradients(theta, X, record.y, config.clip)


def run_audit_game(record: CanaryRecord, theta: nn.ModelParameters, config: AuditConfig) -> AuditSamples:
    """Collect ``config.trials`` statistics under each hypothesis.

    The secret bits are a shuffled balanced sequence, so both hypotheses get
    exactly ``trials`` samples. Under H1 the new value is uniform over the
    m - 1 other values.
    """
    attr = config.attribute
    if not 0 <= record.a < attr.m:
        raise ValueError(f"record attribute value {record.a} outside [0, {attr.m})")
    grads = hypothesis_gradients(theta, record, config)
    g0 = grads[record.a]
    others = np.array([v for v in range(attr.m) if v != record.a])
    T = config.trials
    rng = stream(config.seed, "audit", "bits")
    bits = rng.permutation(np.repeat([0, 1], T))
    new_vals = others[rng.integers(0, others.size, size=2 * T)]
    degenerate = config.sigma == 0 and all(np.array_equal(grads[v], g0) for v in others)
    if degenerate:
        warnings.warn("sigma = 0 and identical hypothesis gradients: the audit is degenerate", RuntimeWarning)

    def stat(i: int) -> float:
        g = g0 if bits[i] == 0 else grads[new_vals[i]]
        diff = g - g0
        if config.sigma > 0:
            diff = diff + config.sigma * stream(config.seed, "audit", "trial", i).standard_normal(g0.size)
        return float(np.linalg.norm(diff))

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            t = np.fromiter(pool.map(stat, range(2 * T), chunksize=256), dtype=np.float64, count=2 * T)
    else:
        t = np.fromiter((stat(i) for i in range(2 * T)), dtype=np.float64, count=2 * T)
    return AuditSamples(t[bits == 0], t[bits == 1], degenerate)


def chi_mean(sigma: float, n: int) -> float:
    """E||N(0, sigma^2 I_n)||_2 = sigma * sqrt(2) * Gamma((n+1)/2) / Gamma(n/2)."""
    return sigma * math.sqrt(2.0) * math.exp(special.gammaln((n + 1) / 2) - special.gammaln(n / 2))


# ------------------------------------------------------------ epsilon hat


def _eps_terms(fpr, fnr, delta):
    """max(log((1-d-FPR)/FNR), log((1-d-FNR)/FPR)), non-positive numerators count as 0."""
    fpr = np.asarray(fpr, dtype=np.float64)
    fnr = np.asarray(fnr, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        n1, n2 = 1 - delta - fpr, 1 - delta - fnr
        t1 = np.where(n1 > 0, np.log(np.where(n1 > 0, n1, 1.0) / fnr), 0.0)
        t2 = np.where(n2 > 0, np.log(np.where(n2 > 0, n2, 1.0) / fpr), 0.0)
    return np.maximum(np.maximum(t1, t2), 0.0)


def eps_from_rates(fpr: float, fnr: float, delta: float) -> float:
    return float(_eps_terms(fpr, fnr, delta))


def empirical_epsilon(samples_h0, samples_h1, delta: float, confidence: float = 0.95,
                      degenerate: bool = False) -> EpsilonEstimate:
    """Best epsilon lower estimate over thresholds and both test directions.

    Candidate thresholds are midpoints between consecutive distinct pooled
    statistics. A zero error count is replaced by its Clopper-Pearson upper
    bound before taking logs. The interval at the chosen threshold uses the
    widest combination of Clopper-Pearson bounds.
    """
    h0 = np.sort(np.asarray(samples_h0, dtype=np.float64))
    h1 = np.sort(np.asarray(samples_h1, dtype=np.float64))
    if h0.size == 0 or h1.size == 0:
        raise ValueError("both hypotheses need samples")
    if degenerate:
        return EpsilonEstimate(math.inf, math.inf, math.inf, float("nan"), "none", float("nan"), float("nan"), degenerate=True)
    n0, n1 = h0.size, h1.size
    pooled = np.unique(np.concatenate([h0, h1]))
    cands = (pooled[:-1] + pooled[1:]) / 2 if pooled.size > 1 else pooled
    zero0 = clopper_pearson(0, n0, confidence)[1]
    zero1 = clopper_pearson(0, n1, confidence)[1]

    best = None
    for direction in ("greater", "less"):
        if direction == "greater":
            # Reject H0 when t > c.
            fp = n0 - np.searchsorted(h0, cands, side="right")
            fn = np.searchsorted(h1, cands, side="right")
        else:
            fp = np.searchsorted(h0, cands, side="left")
            fn = n1 - np.searchsorted(h1, cands, side="left")
        fpr = np.where(fp == 0, zero0, fp / n0)
        fnr = np.where(fn == 0, zero1, fn / n1)
        eps = _eps_terms(fpr, fnr, delta)
        j = int(np.argmax(eps))
        if best is None or eps[j] > best[0]:
            best = (float(eps[j]), float(cands[j]), direction, int(fp[j]), int(fn[j]))

    eps_hat, c, direction, fp, fn = best
    fp_lo, fp_hi = clopper_pearson(fp, n0, confidence)
    fn_lo, fn_hi = clopper_pearson(fn, n1, confidence)
    fp_lo = fp_lo if fp > 0 else zero0
    fn_lo = fn_lo if fn > 0 else zero1
    lo = eps_from_rates(fp_hi, fn_hi, delta)
    hi = eps_from_rates(fp_lo, fn_lo, delta)
    return EpsilonEstimate(
        eps_hat, min(lo, eps_hat), max(hi, eps_hat), c, direction,
        fp / n0, fn / n1,
    )


# --------------------------------------------------------------- crafting


def _distance(ga: np.ndarray, gb: np.ndarray, kind: str) -> np.ndarray:
    if kind == "mse":
        return np.mean((ga - gb) ** 2, axis=-1)
    if kind == "cosine":
        num = np.sum(ga * gb, axis=-1)
        den = np.linalg.norm(ga, axis=-1) * np.linalg.norm(gb, axis=-1)
        return 1.0 - num / np.maximum(den, 1e-300)
    raise ValueError(f"unknown distance {kind!r}; use 'mse' or 'cosine'")


def canary_objective(theta, z_batch, attribute: AttributeSpec, a: int, y: int, clip: float, distance: str) -> np.ndarray:
    """Mean distance between the clipped H0 gradient and each H1 gradient, per row of ``z_batch``."""
    Z = np.atleast_2d(z_batch)
    B = Z.shape[0]
    values = [a] + [v for v in range(attribute.m) if v != a]
    X = np.concatenate([attribute.encode(Z, v) for v in values])
    G = clipped_gradients(theta, X, y, clip).reshape(len(values), B, -1)
    return np.mean([_distance(G[0], G[j], distance) for j in range(1, len(values))], axis=0)


def craft_canary(
    theta: nn.ModelParameters, attribute: AttributeSpec, a: int = 0, y: int = 0, clip: float = 2.0,
    distance: str = "mse", iters: int = 2000, step: float = 5e-2, seed: int = 0, fd_step: float = 1e-5,
    monotone: bool = False,
) -> CanaryRecord:
    """Adam ascent on the hypothesis-gradient distance over the free feature slots.

    Gradients of the objective with respect to ``z`` are central finite
    differences. Plain Adam is not monotone on this piecewise objective, so
    the best iterate seen is returned and ``trace`` holds the objective of
    every iterate. With ``monotone=True`` a step that lowers the objective is
    retried with half the step size (up to 10 times) and otherwise skipped;
    this never decreases but stalls at the first local maximum.
    """
    d = theta.spec.input_dim
    rng = stream(seed, "canary")
    z = attribute.encode(rng.standard_normal(d), a)
    free = attribute.free_slots(d)
    obj = lambda Z: canary_objective(theta, Z, attribute, a, y, clip, distance)
    f = float(obj(z)[0])
    if not math.isfinite(f):
        raise FloatingPointError("canary objective is not finite at initialization")
    trace = [f]
    best_z, best_f = z, f
    m_t = np.zeros(free.size)
    v_t = np.zeros(free.size)
    b1, b2, eps = 0.9, 0.999, 1e-8
    eye = np.eye(d)[free] * fd_step
    for t in range(1, iters + 1):
        vals = obj(np.concatenate([z + eye, z - eye]))
        grad = (vals[: free.size] - vals[free.size:]) / (2 * fd_step)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite objective gradient at iteration {t}")
        m_t = b1 * m_t + (1 - b1) * grad
        v_t = b2 * v_t + (1 - b2) * grad * grad
        direction = (m_t / (1 - b1 ** t)) / (np.sqrt(v_t / (1 - b2 ** t)) + eps)
        lr = step
        for _ in range(10 if monotone else 1):
            cand = z.copy()
            cand[free] += lr * direction
            f_new = float(obj(cand)[0])
            if not math.isfinite(f_new):
                raise FloatingPointError(f"non-finite objective at iteration {t}")
            if not monotone or f_new >= f:
                z, f = cand, f_new
                break
            lr /= 2
        trace.append(f)
        if f > best_f:
            best_z, best_f = z, f
    return CanaryRecord(best_z, a, y, distance, iters, step, tuple(trace))


def random_record(attribute: AttributeSpec, d: int, X_pool, a: int, y: int, seed: int = 0) -> CanaryRecord:
    """A record drawn from a data pool, with its attribute set to ``a``."""
    X_pool = np.asarray(X_pool, dtype=np.float64)
    i = int(stream(seed, "random-record").integers(0, X_pool.shape[0]))
    return CanaryRecord(attribute.encode(X_pool[i], a), a, y, "none")


# ----------------------------------------------------------------- report


def audit_report(estimate: EpsilonEstimate, config: AuditConfig, n_attributes: int) -> dict:
    """Analytic against empirical epsilon for one configuration.

    The analytic value treats ``sensitivity_factor * clip`` as the
    per-attribute sensitivity. The ratio is reported raw and divided by N.
    """
    eps = theoretical_epsilon(config.sensitivity_factor * config.clip, config.sigma, config.delta) \
        if config.sigma > 0 else math.inf
    ok = estimate.eps_hat > 0 and math.isfinite(estimate.eps_hat)
    ratio = eps / estimate.eps_hat if ok else "indistinguishable"
    return {
        "clip": config.clip,
        "sigma": config.sigma,
        "delta": config.delta,
        "eps": eps,
        "eps_hat": estimate.eps_hat,
        "lo": estimate.lo,
        "hi": estimate.hi,
        "N": n_attributes,
        "ratio": ratio,
        "ratio_over_N": ratio / n_attributes if ok else "indistinguishable",
        "degenerate": estimate.degenerate,
    }
