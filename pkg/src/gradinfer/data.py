"""Datasets, a synthetic joint distribution P(x, y, a), and the conditional
samplers the inference game and the attacks draw from."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .nn import Batch

# Provenance tags; attack training refuses the private split.
TRAIN, TEST, PUBLIC, SHADOW, FULL = "train", "test", "public", "shadow", "full"


class SchemaError(ValueError):
    """Raised when a CSV file does not match its declared schema."""


@dataclass(frozen=True)
class Schema:
    feature_names: tuple[str, ...]
    label_name: str = "y"
    sensitive_name: str = "a"
    label_categories: tuple[str, ...] = ("0", "1")
    sensitive_categories: tuple[str, ...] = ("0", "1")

    @property
    def m(self) -> int:
        return len(self.sensitive_categories)

    @property
    def n_labels(self) -> int:
        return len(self.label_categories)


@dataclass(frozen=True)
class Record:
    x: np.ndarray
    y: int
    a: int


@dataclass(frozen=True)
class Dataset:
    """Column-oriented, immutable collection of (x, y, a) records."""

    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    schema: Schema
    user_ids: np.ndarray | None = None
    provenance: str = FULL

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        a = np.asarray(self.a, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("a dataset needs a nonempty 2-D feature matrix")
        if not (len(y) == len(a) == X.shape[0]):
            raise ValueError("X, y and a disagree on record count")
        if a.min() < 0 or a.max() >= self.schema.m:
            raise ValueError("sensitive values out of range")
        if y.min() < 0 or y.max() >= self.schema.n_labels:
            raise ValueError("labels out of range")
        for arr in (X, y, a):
            arr.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        if self.user_ids is not None:
            u = np.asarray(self.user_ids, dtype=np.int64)
            u.setflags(write=False)
            object.__setattr__(self, "user_ids", u)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.schema.m

    def record(self, i: int) -> Record:
        return Record(self.X[i], int(self.y[i]), int(self.a[i]))

    @property
    def records(self) -> list[Record]:
        return [self.record(i) for i in range(len(self))]

    def subset(self, idx, provenance: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.X[idx], self.y[idx], self.a[idx], self.schema,
            None if self.user_ids is None else self.user_ids[idx],
            provenance or self.provenance,
        )

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(self.X[idx], self.y[idx])

    def prior(self) -> np.ndarray:
        """Empirical marginal of the sensitive value."""
        return np.bincount(self.a, minlength=self.m) / len(self)


def with_sensitive_feature(ds: Dataset) -> Dataset:
    """Append the one-hot sensitive value to the features (attribute inference)."""
    onehot = np.eye(ds.m)[ds.a]
    names = ds.schema.feature_names + tuple(
        f"{ds.schema.sensitive_name}={c}" for c in ds.schema.sensitive_categories
    )
    return replace(ds, X=np.hstack([ds.X, onehot]), schema=replace(ds.schema, feature_names=names))


# ---------------------------------------------------------------- CSV ingestion


def load_schema(path) -> dict:
    """Read a JSON schema file.

    Expected keys: ``features`` (list of ``{"name", "type": "numeric"|"categorical",
    "categories"?}``), ``label`` and ``sensitive`` (``{"name", "categories"}``),
    optional ``user_id`` (column name) and ``minmax`` (bool, default true).
    """
    with open(path) as fh:
        return json.load(fh)


def load_csv(path, schema: dict) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)

    feats = schema["features"]
    label, sens = schema["label"], schema["sensitive"]
    user_col = schema.get("user_id")
    required = [f["name"] for f in feats] + [label["name"], sens["name"]]
    if user_col:
        required.append(user_col)
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    if not rows:
        raise SchemaError(f"{path} has no data rows")

    def code(value, spec, line):
        cats = [str(c) for c in spec["categories"]]
        try:
            return cats.index(value.strip())
        except ValueError:
            raise SchemaError(
                f"line {line}: unknown category {value!r} in column {spec['name']!r}"
            ) from None

    columns, names = [], []
    for f in feats:
        if f.get("type", "numeric") == "categorical":
            codes = np.array([code(r[f["name"]], f, i + 2) for i, r in enumerate(rows)])
            cats = [str(c) for c in f["categories"]]
            columns.append(np.eye(len(cats))[codes])
            names += [f"{f['name']}={c}" for c in cats]
        else:
            vals = np.empty(len(rows))
            for i, r in enumerate(rows):
                try:
                    vals[i] = float(r[f["name"]])
                except ValueError:
                    raise SchemaError(
                        f"line {i + 2}: non-numeric value {r[f['name']]!r} in column {f['name']!r}"
                    ) from None
            if schema.get("minmax", True):
                lo, hi = vals.min(), vals.max()
                vals = (vals - lo) / (hi - lo) if hi > lo else np.zeros_like(vals)
            columns.append(vals[:, None])
            names.append(f["name"])

    y = np.array([code(r[label["name"]], label, i + 2) for i, r in enumerate(rows)])
    a = np.array([code(r[sens["name"]], sens, i + 2) for i, r in enumerate(rows)])
    users = None
    if user_col:
        raw = [r[user_col] for r in rows]
        ids = {u: j for j, u in enumerate(dict.fromkeys(raw))}
        users = np.array([ids[u] for u in raw])
    sch = Schema(
        tuple(names), label["name"], sens["name"],
        tuple(str(c) for c in label["categories"]), tuple(str(c) for c in sens["categories"]),
    )
    return Dataset(np.hstack(columns), y, a, sch, users)


# ------------------------------------------------------------ synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian features shifted along one direction per sensitive value and
    one per label.

    ``P(y=1 | a) = 0.5 + rho * (a - E[a]) / max(1, m - 1)``, clamped to
    [0.05, 0.95]; for a uniform binary ``a`` the label/sensitive Pearson
    correlation is then exactly ``rho``.
    """

    d: int = 20
    m: int = 2
    prior: tuple[float, ...] | None = None
    s_a: float = 2.0
    s_y: float = 1.0
    rho: float = -0.2
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        prior = self.prior if self.prior is not None else (1.0 / self.m,) * self.m
        prior = tuple(float(p) for p in prior)
        object.__setattr__(self, "prior", prior)
        if len(prior) != self.m or min(prior) < 0 or abs(sum(prior) - 1) > 1e-9:
            raise ValueError("prior must be a probability vector of length m")
        if self.d < 2:
            raise ValueError("d must be >= 2")
        if not -1 <= self.rho <= 1:
            raise ValueError("rho must lie in [-1, 1]")
        if self.s_a < 0 or self.s_y < 0:
            raise ValueError("shift strengths must be >= 0")

    def directions(self) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal (m, d) sensitive and (2, d) label directions."""
        if self.d < self.m + 2:
            raise ValueError(f"d={self.d} cannot host {self.m + 2} orthogonal directions")
        rng = np.random.default_rng([self.seed, 0xD1])
        q, _ = np.linalg.qr(rng.standard_normal((self.d, self.m + 2)))
        return q[:, : self.m].T, q[:, self.m:].T

    def p_label_given_a(self) -> np.ndarray:
        vals = np.arange(self.m)
        mean_a = float(np.dot(vals, self.prior))
        p = 0.5 + self.rho * (vals - mean_a) / max(1, self.m - 1)
        return np.clip(p, 0.05, 0.95)


def _synth_schema(spec: SyntheticSpec) -> Schema:
    return Schema(
        tuple(f"x{i}" for i in range(spec.d)), "y", "a", ("0", "1"),
        tuple(str(i) for i in range(spec.m)),
    )


def synth_generate(spec: SyntheticSpec, n: int, stream_label: int = 0) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    U, V = spec.directions()
    rng = np.random.default_rng([spec.seed, 0xDA7A, stream_label])
    a = rng.choice(spec.m, size=n, p=spec.prior)
    y = (rng.random(n) < spec.p_label_given_a()[a]).astype(np.int64)
    X = spec.s_a * U[a] + spec.s_y * V[y] + spec.noise * rng.standard_normal((n, spec.d))
    return Dataset(X, y, a, _synth_schema(spec))


def synth_users(
    spec: SyntheticSpec, n_users: int, mean_records: int, user_shift: float = 1.0,
    min_records: int = 1,
) -> Dataset:
    """Synthetic population with user ids.

    Each user has a sensitive value drawn from the prior, a private offset
    ``N(0, user_shift^2 I)`` added to all of its records, and a Poisson number
    of records (at least ``min_records``).
    """
    U, V = spec.directions()
    rng = np.random.default_rng([spec.seed, 0x05E5])
    p_y = spec.p_label_given_a()
    Xs, ys, as_, us = [], [], [], []
    for u in range(n_users):
        count = max(min_records, int(rng.poisson(mean_records)))
        a_u = int(rng.choice(spec.m, p=spec.prior))
        offset = user_shift * rng.standard_normal(spec.d)
        y_u = (rng.random(count) < p_y[a_u]).astype(np.int64)
        X_u = spec.s_a * U[a_u] + spec.s_y * V[y_u] + offset + spec.noise * rng.standard_normal((count, spec.d))
        Xs.append(X_u)
        ys.append(y_u)
        as_.append(np.full(count, a_u))
        us.append(np.full(count, u))
    return Dataset(np.vstack(Xs), np.concatenate(ys), np.concatenate(as_), _synth_schema(spec), np.concatenate(us))


# Health-like preset: a third sensitive class carrying almost no signal.
def health_like_spec(seed: int = 0) -> SyntheticSpec:
    return SyntheticSpec(d=20, m=3, prior=(0.43, 0.38, 0.19), s_a=1.5, s_y=1.0, rho=-0.1, seed=seed)


# ------------------------------------------------------------------- sampling


def sample_sensitive(prior, rng: np.random.Generator) -> int:
    prior = np.asarray(prior, dtype=np.float64)
    return int(rng.choice(prior.size, p=prior / prior.sum()))


def conditional_indices(ds: Dataset, a: int, k: int, rng: np.random.Generator) -> np.ndarray:
    pool = np.flatnonzero(ds.a == a)
    if pool.size == 0:
        raise ValueError(f"no record with sensitive value {a}")
    return pool[rng.integers(0, pool.size, size=k)]


def sample_conditional_batch(ds: Dataset, a: int, k: int, rng: np.random.Generator) -> Batch:
    """k records drawn with replacement among those with sensitive value a."""
    return ds.batch(conditional_indices(ds, a, k, rng))


def property_count(alpha: float, k: int) -> int:
    # Tolerance guards products like 0.29 * 100 = 28.999999999999996.
    return int(math.floor(alpha * k + 1e-9))


def ratio_indices(ds: Dataset, property_value: int, alpha: float, k: int, rng: np.random.Generator) -> np.ndarray:
    n_prop = property_count(alpha, k)
    has = np.flatnonzero(ds.a == property_value)
    lacks = np.flatnonzero(ds.a != property_value)
    if n_prop > 0 and has.size == 0:
        raise ValueError("no record has the property")
    if n_prop < k and lacks.size == 0:
        raise ValueError("no record lacks the property")
    parts = []
    if n_prop:
        parts.append(has[rng.integers(0, has.size, size=n_prop)])
    if k - n_prop:
        parts.append(lacks[rng.integers(0, lacks.size, size=k - n_prop)])
    return np.concatenate(parts)


def sample_ratio_batch(ds: Dataset, property_value: int, alpha: float, k: int, rng: np.random.Generator) -> Batch:
    """floor(alpha * k) records with the property, the rest without; both bootstrapped."""
    return ds.batch(ratio_indices(ds, property_value, alpha, k, rng))


@dataclass(frozen=True)
class RatioBinSpec:
    """Bins {0}, (0, 1/(m-1)], ..., ((m-2)/(m-1), 1] over the property ratio."""

    m_bins: int = 6

    def __post_init__(self):
        if self.m_bins < 3:
            raise ValueError("ratio binning needs m_bins >= 3")

    def bounds(self, j: int) -> tuple[float, float]:
        if j == 0:
            return 0.0, 0.0
        w = 1.0 / (self.m_bins - 1)
        return (j - 1) * w, j * w

    def bin_of(self, alpha: float) -> int:
        if alpha <= 0:
            return 0
        return min(self.m_bins - 1, int(math.ceil(alpha * (self.m_bins - 1) - 1e-12)))

    def sample_ratio(self, j: int, rng: np.random.Generator) -> float:
        lo, hi = self.bounds(j)
        if j == 0:
            return 0.0
        # random() is in [0, 1), so this lands in (lo, hi].
        return hi - rng.random() * (hi - lo)


def split(ds: Dataset, fractions, seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint (train, test, public) splits.

    ``fractions`` are either three fractions summing to at most 1 or three
    absolute record counts.
    """
    fractions = tuple(fractions)
    if len(fractions) != 3:
        raise ValueError("need three split sizes")
    n = len(ds)
    if all(isinstance(f, (int, np.integer)) for f in fractions):
        sizes = [int(f) for f in fractions]
        if sum(sizes) > n:
            raise ValueError(f"split sizes {sizes} exceed {n} records")
    else:
        if any(f <= 0 for f in fractions) or sum(fractions) > 1 + 1e-9:
            raise ValueError("fractions must be positive and sum to at most 1")
        sizes = [int(math.floor(f * n + 1e-9)) for f in fractions]
    if any(s <= 0 for s in sizes):
        raise ValueError(f"empty split: sizes {sizes}")
    perm = np.random.default_rng([seed, 0x5B17]).permutation(n)
    cuts = np.cumsum([0] + sizes)
    tags = (TRAIN, TEST, PUBLIC)
    return tuple(ds.subset(np.sort(perm[cuts[i]:cuts[i + 1]]), tags[i]) for i in range(3))


def build_shadow(public: Dataset, s: int, balanced: bool = True, seed: int = 0) -> Dataset:
    """Draw s shadow records (without replacement) from the public split."""
    rng = np.random.default_rng([seed, 0x5AD0])
    if not balanced:
        if s > len(public):
            raise ValueError(f"insufficient records: need {s}, have {len(public)}")
        return public.subset(np.sort(rng.choice(len(public), size=s, replace=False)), SHADOW)
    m = public.m
    counts = [s // m + (1 if j < s % m else 0) for j in range(m)]
    picks = []
    for j, c in enumerate(counts):
        pool = np.flatnonzero(public.a == j)
        if pool.size < c:
            raise ValueError(
                f"insufficient records: sensitive value {j} needs {c}, public set has {pool.size}"
            )
        picks.append(rng.choice(pool, size=c, replace=False))
    return public.subset(np.sort(np.concatenate(picks)), SHADOW)


def user_partition(
    ds: Dataset, min_samples: int, n_train_users: int, n_shadow_users: int, seed: int,
) -> tuple[dict[int, Dataset], dict[int, Dataset]]:
    """Drop users with fewer than ``min_samples`` records, then split the rest
    into disjoint train and shadow user groups."""
    if ds.user_ids is None:
        raise ValueError("dataset has no user ids")
    ids, counts = np.unique(ds.user_ids, return_counts=True)
    eligible = ids[counts >= min_samples]
    need = n_train_users + n_shadow_users
    if eligible.size < need:
        raise ValueError(f"insufficient users: need {need}, {eligible.size} have >= {min_samples} records")
    chosen = np.random.default_rng([seed, 0x05E2]).permutation(eligible)[:need]
    groups = (chosen[:n_train_users], chosen[n_train_users:])
    tags = (TRAIN, SHADOW)
    return tuple(
        {int(u): ds.subset(np.flatnonzero(ds.user_ids == u), tag) for u in sorted(g)}
        for g, tag in zip(groups, tags)
    )
