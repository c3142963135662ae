"""Attack models for inference from gradients."""

from .estimators import SoftmaxNet, make_estimator
from .pairs import ATTACK_KINDS, AttackConfig, adaptive_wrap, gen_attack_training_set
from .posterior import (
    OrdinalModel,
    PosteriorModel,
    multi_round_aggregate,
    normalize_scores,
    ordinal_posterior,
    predict_posterior,
    prior_correct,
    train_ordinal,
    train_posterior,
)
from .reducers import PCA, MaxPool, reduce, reducer_from_dict
from .uia import (
    UserEncoder,
    posterior_from_embeddings,
    train_uia_encoder,
    uia_posterior,
    uia_posterior_from_gradients,
)

__all__ = [
    "ATTACK_KINDS", "AttackConfig", "MaxPool", "OrdinalModel", "PCA", "PosteriorModel", "SoftmaxNet",
    "UserEncoder", "adaptive_wrap", "gen_attack_training_set", "make_estimator", "multi_round_aggregate",
    "normalize_scores", "ordinal_posterior", "posterior_from_embeddings", "predict_posterior", "prior_correct", "reduce",
    "reducer_from_dict", "train_ordinal", "train_posterior", "train_uia_encoder", "uia_posterior",
    "uia_posterior_from_gradients",
]
