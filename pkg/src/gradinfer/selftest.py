"""Fast invariant checks runnable without pytest."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from . import nn
from .analysis import DiscreteChannel, binary_entropy, entropy, fano_binary_numeric, fano_error_lower_bound, mutual_information_exact
from .attacks.posterior import multi_round_aggregate, ordinal_posterior
from .defenses import dpsgd, prune, sign, theoretical_epsilon
from .metrics import advantage, auroc, clopper_pearson


def _gradient_oracle(rng):
    worst = 0.0
    for i in range(5):
        d = int(rng.integers(2, 6))
        spec = nn.NetworkSpec((d, int(rng.integers(2, 6)), 3), init_seed=int(rng.integers(1 << 31)))
        params = nn.init_network(spec)
        batch = nn.Batch(rng.standard_normal((4, d)), rng.integers(0, 3, 4))
        worst = max(worst, nn.finite_difference_check(params, batch))
    return worst < 1e-4


def _defense_invariants(rng):
    ok = True
    for _ in range(100):
        n = int(rng.integers(1, 40))
        g = rng.standard_normal(n) * rng.exponential(3)
        rate = float(rng.random())
        ok &= int(np.sum(prune(g, rate) == 0)) >= math.ceil(rate * n - 1e-9)
        ok &= set(np.unique(sign(g))) <= {-1.0, 0.0, 1.0}
        ps = rng.standard_normal((5, n)) * 10
        ok &= np.linalg.norm(dpsgd(ps, 2.0, 0.0, rng)) <= 2.0 + 1e-12
    return bool(ok)


def _fano(rng):
    for _ in range(200):
        ch = DiscreteChannel.random(int(rng.integers(2, 5)), int(rng.integers(2, 9)), rng)
        lb = fano_error_lower_bound(entropy(ch.prior), mutual_information_exact(ch), ch.prior.size)
        if ch.bayes_error() < lb - 1e-12:
            return False
    e = 0.2
    return abs(fano_binary_numeric(binary_entropy(e)) - e) < 1e-8


def _aggregation(rng):
    P = rng.dirichlet(np.ones(4), size=50)
    a_hat, _ = multi_round_aggregate(P[None], np.full(4, 0.25))
    s = np.sort(rng.random((50, 5)), axis=1)[:, ::-1]
    return bool(np.array_equal(a_hat, P.argmax(axis=1)) and np.allclose(ordinal_posterior(s).sum(axis=1), 1, atol=1e-12))


def _statistics(rng):
    return (
        auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
        and abs(clopper_pearson(0, 10)[1] - 0.3085) < 1e-3
        and advantage(1.0, 0.5) == 1.0
        and abs(theoretical_epsilon(2, 0.1, 1e-5) - 96.90) < 0.01
    )


CHECKS: dict[str, Callable[[np.random.Generator], bool]] = {
    "gradient oracle": _gradient_oracle,
    "defense invariants": _defense_invariants,
    "fano bound": _fano,
    "ordinal and aggregation": _aggregation,
    "statistics primitives": _statistics,
}


def run_selftest(seed: int = 0, echo=print) -> tuple[int, int]:
    passed = failed = 0
    for name, check in CHECKS.items():
        try:
            ok = bool(check(np.random.default_rng([seed, len(name)])))
        except Exception as exc:  # a crashing check is a failure, not an abort
            echo(f"FAIL {name}: {exc!r}")
            failed += 1
            continue
        echo(f"{'PASS' if ok else 'FAIL'} {name}")
        passed += ok
        failed += not ok
    echo(f"selftest: {passed} passed, {failed} failed")
    return passed, failed
