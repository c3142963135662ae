"""The inference game: a challenger trains a network epoch by epoch while an
adversary, at each observable round, infers a hidden sensitive variable
from one released batch gradient per trial.

Randomness is organised as labeled streams under the master seed:

* ``("trial", t)``: sensitive value and batch indices of trial t;
* ``("trial", t, "round", i)``: defense noise / latent noise for trial t at round i;
* ``("attack", i)``: the attacker's shadow pairs and model fit at round i;
* ``("defender", i)``: the defender's classifier used by adversarial perturbation;
* ``("train", i)``: shuffling and DP noise of the epoch-i utility update.

Because only the defense differs between cells of a defense evaluation,
trials are paired across cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .attacks.pairs import AttackConfig, gen_attack_training_set, user_index_table
from .attacks.posterior import multi_round_aggregate, prior_correct, train_ordinal, train_posterior
from .attacks.reducers import reducer_from_dict
from .attacks.uia import posterior_from_embeddings, train_uia_encoder
from .data import (
    PUBLIC,
    SHADOW,
    TRAIN,
    Dataset,
    RatioBinSpec,
    SyntheticSpec,
    build_shadow,
    conditional_indices,
    ratio_indices,
    sample_sensitive,
    split,
    synth_generate,
    synth_users,
    with_sensitive_feature,
)
from .defenses import DPSGD, VIB, AdvPerturb, Identity, clip_rows, defense_label
from .metrics import MetricsReport, auroc, report_from_posteriors
from .release import release_gradients
from .rng import child_seed, stream

ATTACKS = ("aia", "pia", "dia", "uia")


class GameAbort(RuntimeError):
    """Raised when released gradients contain non-finite values."""


@dataclass(frozen=True)
class GameConfig:
    """Parameters of one inference game.

    ``rounds`` lists the observable epochs (1-based); None means all of them.
    ``m`` is derived from the data for AIA/PIA, equals ``m_bins`` for DIA and
    ``n_candidates`` for UIA.
    """

    attack: str = "pia"
    hidden: tuple[int, ...] = (32, 16)
    k: int = 16
    epochs: int = 10
    rounds: tuple[int, ...] | None = None
    trials: int = 5000
    shadow_size: int = 1000
    n_pairs: int = 1000
    defense: object = field(default_factory=Identity)
    adaptive: bool = False
    estimator: str = "logreg"
    reducer: dict = field(default_factory=lambda: {"kind": "maxpool", "kernel": 3})
    lr: float = 0.01
    train_batch_size: int = 16
    m_bins: int = 6
    property_value: int = 1
    n_candidates: int = 5
    embedding_dim: int = 50
    prior: str = "empirical"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.attack not in ATTACKS:
            raise ValueError(f"attack must be one of {ATTACKS}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.rounds is not None:
            object.__setattr__(self, "rounds", tuple(sorted(set(int(r) for r in self.rounds))))
        errors = self.validate()
        if errors:
            raise ValueError("; ".join(errors))

    def validate(self) -> list[str]:
        errs = []
        if self.epochs < 1:
            errs.append("epochs must be >= 1")
        if self.rounds is not None:
            if not self.rounds:
                errs.append("observable rounds must be nonempty")
            elif min(self.rounds) < 1 or max(self.rounds) > self.epochs:
                errs.append(f"observable rounds must lie in 1..{self.epochs}")
        if self.trials < 1:
            errs.append("trials must be >= 1")
        if self.k < 1:
            errs.append("batch size k must be >= 1")
        if self.n_pairs < 2:
            errs.append("n_pairs must be >= 2")
        if self.prior not in ("empirical", "uniform"):
            errs.append("prior must be 'empirical' or 'uniform'")
        if self.attack == "uia" and self.n_candidates < 2:
            errs.append("UIA needs at least 2 candidates")
        return errs

    @property
    def observed(self) -> tuple[int, ...]:
        return self.rounds if self.rounds is not None else tuple(range(1, self.epochs + 1))


@dataclass(frozen=True)
class GameData:
    """Private training split, test split, and the adversary's shadow data.

    ``public`` is what the defender may use to fit its own sensitive-value
    classifier (adversarial perturbation).
    """

    train: Dataset
    test: Dataset
    shadow: Dataset
    public: Dataset

    def __post_init__(self):
        if self.shadow.provenance == TRAIN or self.public.provenance == TRAIN:
            raise ValueError("shadow/public data must not come from the training split")


@dataclass
class TrialRecord:
    a: int
    posteriors: np.ndarray
    a_hat: int
    scores: np.ndarray


@dataclass
class GameResult:
    config: GameConfig
    trials: list[TrialRecord]
    rounds: tuple[int, ...]
    prior: np.ndarray
    models: list
    theta: nn.ModelParameters
    thetas: list[nn.ModelParameters]

    @property
    def truths(self) -> np.ndarray:
        return np.array([t.a for t in self.trials])

    def round_posteriors(self) -> np.ndarray:
        """(|R|, T, m) array of per-round posteriors."""
        return np.stack([t.posteriors for t in self.trials], axis=1)


# ---------------------------------------------------------------- data setup


def synthetic_game_data(
    spec: SyntheticSpec, attack: str, n: int = 10000, fractions=(0.5, 0.25, 0.25),
    shadow_size: int = 1000, seed: int = 0, n_users: int = 60, n_shadow_users: int = 20,
    mean_records: int = 40,
) -> GameData:
    """Splits of the synthetic population prepared for one attack kind."""
    if attack == "uia":
        pop = synth_users(spec, n_users + n_shadow_users, mean_records, min_records=4)
        users = np.unique(pop.user_ids)
        perm = np.random.default_rng([seed, 0x05E2]).permutation(users)
        tr_users, sh_users = np.sort(perm[:n_users]), np.sort(perm[n_users:])
        train = pop.subset(np.flatnonzero(np.isin(pop.user_ids, tr_users)), TRAIN)
        shadow = pop.subset(np.flatnonzero(np.isin(pop.user_ids, sh_users)), SHADOW)
        # The task test split is fresh population data without users.
        test = synth_generate(spec, max(1000, n // 4), stream_label=7)
        test = replace(test, provenance="test")
        return GameData(train, test, shadow, shadow.subset(np.arange(len(shadow)), PUBLIC))
    ds = synth_generate(spec, n)
    if attack == "aia":
        ds = with_sensitive_feature(ds)
    train, test, public = split(ds, fractions, seed)
    shadow = build_shadow(public, min(shadow_size, len(public)), balanced=True, seed=seed)
    return GameData(train, test, shadow, public)


def game_prior(config: GameConfig, data: GameData) -> np.ndarray:
    m = game_classes(config, data)
    if config.attack in ("dia", "uia") or config.prior == "uniform":
        return np.full(m, 1.0 / m)
    return data.train.prior()


def game_classes(config: GameConfig, data: GameData) -> int:
    if config.attack == "dia":
        return config.m_bins
    if config.attack == "uia":
        return config.n_candidates
    return data.train.m


def network_spec(config: GameConfig, data: GameData) -> nn.NetworkSpec:
    widths = (data.train.d,) + config.hidden + (data.train.schema.n_labels,)
    vib = None
    if isinstance(config.defense, VIB):
        vib = nn.VIBConfig(config.defense.latent_dim, config.defense.beta)
    return nn.NetworkSpec(widths, vib=vib, init_seed=child_seed(config.seed, "init"))


# --------------------------------------------------------------- trial draws


@dataclass
class TrialDraws:
    """Per-trial secrets and batch indices, fixed across rounds."""

    a: np.ndarray
    idx: np.ndarray
    candidate_idx: np.ndarray | None = None


def draw_trials(config: GameConfig, data: GameData, prior: np.ndarray) -> TrialDraws:
    T, k = config.trials, config.k
    train = data.train
    a = np.empty(T, dtype=np.int64)
    idx = np.empty((T, k), dtype=np.int64)
    cand = None
    if config.attack == "uia":
        users, pools = user_index_table(train)
        if users.size < config.n_candidates:
            raise ValueError("fewer training users than candidates")
        cand = np.empty((T, config.n_candidates, k), dtype=np.int64)
    bins = RatioBinSpec(config.m_bins) if config.attack == "dia" else None
    for t in range(T):
        rng = stream(config.seed, "trial", t)
        if config.attack in ("aia", "pia"):
            a[t] = sample_sensitive(prior, rng)
            idx[t] = conditional_indices(train, int(a[t]), k, rng)
        elif config.attack == "dia":
            a[t] = sample_sensitive(prior, rng)
            alpha = bins.sample_ratio(int(a[t]), rng)
            idx[t] = ratio_indices(train, config.property_value, alpha, k, rng)
        else:
            chosen = rng.choice(users.size, size=config.n_candidates, replace=False)
            a[t] = rng.integers(0, config.n_candidates)
            for j, u in enumerate(chosen):
                pool = pools[u]
                cand[t, j] = pool[rng.integers(0, pool.size, size=k)]
            pool = pools[chosen[a[t]]]
            idx[t] = pool[rng.integers(0, pool.size, size=k)]
    return TrialDraws(a, idx, cand)


# ------------------------------------------------------------ utility update


def train_epoch(
    theta: nn.ModelParameters, train: Dataset, config: GameConfig, epoch: int,
) -> nn.ModelParameters:
    """One pass of minibatch SGD over the full training split.

    With a DP-SGD defense the update itself clips per-sample gradients and
    adds Gaussian noise.
    """
    rng = stream(config.seed, "train", epoch)
    order = rng.permutation(len(train))
    flat = theta.flat.copy()
    spec = theta.spec
    bs = config.train_batch_size
    dp = config.defense if isinstance(config.defense, DPSGD) else None
    for start in range(0, order.size, bs):
        rows = order[start:start + bs]
        params = nn.ModelParameters(spec, flat)
        batch = train.batch(rows)
        xi = nn.draw_latent_noise(spec, rows.size, rng)
        if dp is not None:
            ps = clip_rows(nn.per_sample_gradients(params, batch, xi=xi), dp.clip)
            g = ps.mean(axis=0)
            if dp.sigma > 0:
                g = g + dp.sigma * rng.standard_normal(g.size) / rows.size
        else:
            _, g = nn.loss_and_gradient(params, batch, xi=xi)
        flat = flat - config.lr * g
    return nn.ModelParameters(spec, flat)


def task_auroc(theta: nn.ModelParameters, test: Dataset) -> float:
    """AUROC of the task classifier on the test split (mean prediction for VIB)."""
    probs = nn.predict_proba(theta, test.X)
    if probs.shape[1] == 2:
        return auroc(probs[:, 1], test.y)
    return auroc(probs, test.y)


# ------------------------------------------------------------------ the game


def _attack_config(config: GameConfig, m: int, adaptive_defense) -> AttackConfig:
    return AttackConfig(
        kind=config.attack, k=config.k, n_pairs=config.n_pairs, estimator=config.estimator,
        reducer=config.reducer, m=m if config.attack != "uia" else config.n_candidates,
        property_value=config.property_value, embedding_dim=config.embedding_dim,
        defense=adaptive_defense,
    )


def _fit_model(config: GameConfig, G, labels, m: int, seed: int, round_index: int, defended: bool):
    reducer = reducer_from_dict(config.reducer)
    if config.attack == "dia":
        return train_ordinal(G, labels, m, reducer, config.estimator, seed, round_index, defended)
    if config.attack == "uia":
        return train_uia_encoder(G, labels, config.embedding_dim, reducer, seed=seed)
    return train_posterior(G, labels, reducer, config.estimator, m, seed, round_index, defended)


def defender_classifier(config: GameConfig, data: GameData, theta: nn.ModelParameters, epoch: int, m: int):
    """The defender's own P(a | g) at this round, fit on clean public-data gradients."""
    seed = child_seed(config.seed, "defender", epoch)
    if config.attack == "uia":
        public = data.shadow
        n_cls = np.unique(public.user_ids).size
    else:
        public = build_shadow(data.public, min(config.shadow_size, len(data.public)), True, seed) \
            if config.attack != "dia" else data.public
        n_cls = m
    G, labels = gen_attack_training_set(theta, public, _attack_config(config, m, None), seed=seed)
    return train_posterior(G, labels, reducer_from_dict(config.reducer), config.estimator, n_cls, seed, epoch)


def run_inference_game(config: GameConfig, data: GameData) -> GameResult:
    """Play the game for ``config.epochs`` epochs and ``config.trials`` trials."""
    prior = game_prior(config, data)
    m = game_classes(config, data)
    spec = network_spec(config, data)
    theta = nn.init_network(spec)
    draws = draw_trials(config, data, prior)
    observed = set(config.observed)
    defense = config.defense
    if isinstance(defense, AdvPerturb) and config.attack == "uia":
        # Trial labels index candidates, not the defender's classes: push
        # each gradient toward a random class instead.
        defense = replace(defense, targeted=True)
    adv = defense if config.adaptive else None
    per_round, models, thetas = [], [], [theta]

    for epoch in range(1, config.epochs + 1):
        if epoch in observed:
            clf = None
            targets = None
            if isinstance(defense, AdvPerturb):
                clf = defender_classifier(config, data, theta, epoch, m)
                if defense.targeted:
                    targets = stream(config.seed, "targets", epoch).integers(0, clf.m, size=config.trials)
            G_obs = release_gradients(
                theta, data.train, draws.idx, defense, labels=draws.a,
                row_stream=lambda t, e=epoch: stream(config.seed, "trial", t, "round", e),
                classifier=clf, targets=targets, workers=config.workers,
            )
            if not np.all(np.isfinite(G_obs)):
                bad = np.flatnonzero(~np.all(np.isfinite(G_obs), axis=1))
                raise GameAbort(f"non-finite released gradients at epoch {epoch} in trials {bad[:10].tolist()}")
            seed_i = child_seed(config.seed, "attack", epoch)
            acfg = _attack_config(config, m, adv)
            G_tr, y_tr = gen_attack_training_set(
                theta, data.shadow, acfg, seed=seed_i, classifier=clf, workers=config.workers,
            )
            model = _fit_model(config, G_tr, y_tr, m, seed_i, epoch, adv is not None)
            models.append(model)
            per_round.append(_posteriors(config, data, draws, theta, model, G_obs, prior, adv, clf, epoch))
        theta = train_epoch(theta, data.train, config, epoch)
        thetas.append(theta)

    P = np.stack(per_round)  # (|R|, T, m)
    a_hat, scores = multi_round_aggregate(P, prior)
    trials = [TrialRecord(int(draws.a[t]), P[:, t, :], int(a_hat[t]), scores[t]) for t in range(config.trials)]
    return GameResult(config, trials, tuple(sorted(observed)), prior, models, theta, thetas)


def _posteriors(config, data, draws, theta, model, G_obs, prior, adv, clf, epoch) -> np.ndarray:
    if config.attack != "uia":
        return prior_correct(model.predict(G_obs), prior)
    T, m, k = draws.candidate_idx.shape
    # The adversary computes candidate gradients itself; an adaptive one also
    # passes them through the known mechanism.
    cand = release_gradients(
        theta, data.train, draws.candidate_idx.reshape(T * m, k), adv,
        labels=np.zeros(T * m, dtype=np.int64),
        row_stream=lambda r, e=epoch: stream(config.seed, "candidate", r, "round", e),
        classifier=clf,
        targets=None if clf is None else stream(config.seed, "cand-targets", epoch).integers(0, clf.m, size=T * m),
        workers=config.workers,
    )
    e_obs = model.embed(G_obs)
    e_cand = model.embed(cand).reshape(T, m, -1)
    return posterior_from_embeddings(e_obs, e_cand)


# --------------------------------------------------------------- evaluation


def evaluate_game(result: GameResult, mode: str = "multi-round") -> MetricsReport | list[MetricsReport]:
    """Per-round reports (a list, one per observed round) or the multi-round report."""
    truths = result.truths
    P = result.round_posteriors()
    if mode == "per-round":
        return [report_from_posteriors(P[i], truths, result.prior) for i in range(P.shape[0])]
    if mode != "multi-round":
        raise ValueError("mode must be 'per-round' or 'multi-round'")
    scores = np.stack([t.scores for t in result.trials])
    return report_from_posteriors(_softmax(scores), truths, result.prior)


def cumulative_reports(result: GameResult) -> list[MetricsReport]:
    """Multi-round report using rounds R[:j] for j = 1..|R|."""
    truths = result.truths
    P = result.round_posteriors()
    out = []
    for j in range(1, P.shape[0] + 1):
        _, scores = multi_round_aggregate(P[:j], result.prior)
        out.append(report_from_posteriors(_softmax(scores), truths, result.prior))
    return out


def _softmax(scores):
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class DefenseCell:
    defense: str
    mode: str
    report: MetricsReport
    task_auroc: float


def run_defense_eval(base: GameConfig, data: GameData, defenses, modes=("static", "adaptive"),
                     eval_mode: str = "multi-round") -> list[DefenseCell]:
    """One report per (defense, adversary mode) with shared seeds across cells."""
    cells = []
    for d in defenses:
        for mode in modes:
            cfg = replace(base, defense=d, adaptive=(mode == "adaptive"))
            res = run_inference_game(cfg, data)
            rep = evaluate_game(res, eval_mode)
            cells.append(DefenseCell(defense_label(d), mode, rep, task_auroc(res.theta, data.test)))
    return cells


def privacy_utility_sweep(base: GameConfig, data: GameData, profiles: dict, modes=("static", "adaptive"),
                          eval_mode: str = "multi-round") -> list[dict]:
    """Adversary advantage on training-data trials against task AUROC on the test split.

    The undefended network is included as the reference point.
    """
    points = []
    entries = [("identity", Identity())] + [(name, d) for name, ds in profiles.items() for d in ds]
    for name, d in entries:
        for mode in modes:
            cfg = replace(base, defense=d, adaptive=(mode == "adaptive"))
            res = run_inference_game(cfg, data)
            rep = evaluate_game(res, eval_mode)
            points.append({
                "family": name, "defense": defense_label(d), "mode": mode,
                "advantage": rep.advantage, "task_auroc": task_auroc(res.theta, data.test),
            })
    return points
