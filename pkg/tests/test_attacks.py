import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gradinfer import data, nn
from gradinfer.attacks import (
    PCA, AttackConfig, MaxPool, adaptive_wrap, gen_attack_training_set, make_estimator,
    multi_round_aggregate, normalize_scores, ordinal_posterior, posterior_from_embeddings,
    prior_correct, reduce, reducer_from_dict, train_ordinal, train_posterior, train_uia_encoder,
    uia_posterior, uia_posterior_from_gradients,
)
from gradinfer.defenses import DPSGD, Identity, Sign


def blobs(n=200, d=6, sep=6.0, m=2, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % m
    centers = sep * np.eye(m, d)
    return centers[y] + rng.standard_normal((n, d)), y


@pytest.fixture(scope="module")
def shadow_setup():
    spec = data.SyntheticSpec(d=8)
    ds = data.synth_generate(spec, 600)
    _, _, public = data.split(ds, (0.4, 0.2, 0.4), seed=0)
    shadow = data.build_shadow(public, 200, seed=0)
    theta = nn.init_network(nn.NetworkSpec((8, 6, 2), init_seed=0))
    return theta, shadow


class TestReducers:
    def test_maxpool_hand_case(self):
        np.testing.assert_array_equal(reduce(np.array([1.0, 5, 2, 0, -1, 7]), MaxPool(3)), [5.0, 7.0])

    def test_maxpool_short_last_window(self):
        np.testing.assert_array_equal(MaxPool(3).transform(np.array([1.0, 2, 3, -4])), [3.0, -4.0])

    def test_maxpool_backward_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        G = rng.standard_normal((2, 10))
        w = rng.standard_normal((2, 4))
        pool = MaxPool(3)
        analytic = pool.backward(G, w)
        h = 1e-7
        for r in range(2):
            for j in range(10):
                e = np.zeros_like(G)
                e[r, j] = h
                fd = (np.sum(w * pool.transform(G + e)) - np.sum(w * pool.transform(G - e))) / (2 * h)
                assert analytic[r, j] == pytest.approx(fd, abs=1e-6)

    def test_pca_recovers_dominant_direction(self):
        rng = np.random.default_rng(0)
        direction = np.array([3.0, 4.0, 0.0]) / 5
        G = rng.standard_normal((500, 1)) * 10 * direction + 0.01 * rng.standard_normal((500, 3))
        pca = PCA(1).fit(G)
        assert abs(abs(pca.components_[0] @ direction) - 1) < 1e-3

    def test_from_dict(self):
        assert reducer_from_dict({"kind": "maxpool", "kernel": 4}) == MaxPool(4)
        assert isinstance(reducer_from_dict({"kind": "pca", "dims": 5}), PCA)
        with pytest.raises(ValueError):
            reducer_from_dict({"kind": "fft"})


class TestPosterior:
    def test_separable_training_accuracy(self):
        X, y = blobs()
        model = train_posterior(X, y, MaxPool(1), "logreg")
        assert np.mean(model.predict(X).argmax(axis=1) == y) >= 0.99

    def test_deterministic(self):
        X, y = blobs()
        a = train_posterior(X, y, MaxPool(1), "mlp", seed=3).predict(X)
        b = train_posterior(X, y, MaxPool(1), "mlp", seed=3).predict(X)
        np.testing.assert_array_equal(a, b)

    def test_probabilities_sum_to_one(self):
        X, y = blobs(m=3, sep=2.0)
        P = train_posterior(X, y, MaxPool(2), "mlp").predict(X)
        assert P.shape == (len(X), 3)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(P >= 0)

    def test_single_class_rejected_at_training(self):
        X, _ = blobs()
        with pytest.raises(ValueError, match="two classes"):
            train_posterior(X, np.zeros(len(X), dtype=int), MaxPool(1))

    def test_training_point_gets_its_label(self):
        X, y = blobs()
        model = train_posterior(X, y, MaxPool(1))
        for i in (0, 1, 17):
            assert model.predict(X[i]).argmax() == y[i]

    @pytest.mark.parametrize("kind", ["logreg", "mlp"])
    def test_input_gradient_matches_finite_differences(self, kind):
        X, y = blobs(n=60, sep=1.0)
        model = train_posterior(X, y, MaxPool(2), kind)
        G = X[:3]
        labels = y[:3]
        analytic = model.loss_input_gradient(G, labels)

        def ce(Gp):
            P = model.predict(Gp)
            return -np.log(P[np.arange(3), labels])

        h = 1e-6
        for j in range(X.shape[1]):
            e = np.zeros_like(G)
            e[:, j] = h
            np.testing.assert_allclose(analytic[:, j], (ce(G + e) - ce(G - e)) / (2 * h), atol=1e-5)

    def test_unknown_estimator(self):
        with pytest.raises(ValueError):
            make_estimator("forest")

    def test_prior_correction(self):
        np.testing.assert_allclose(prior_correct([0.5, 0.5], [0.2, 0.8]), [0.2, 0.8])
        np.testing.assert_allclose(prior_correct([0.8, 0.2], [0.5, 0.5]), [0.8, 0.2])


class TestOrdinal:
    def test_hand_case(self):
        np.testing.assert_allclose(ordinal_posterior([0.8, 0.3]), [0.2, 0.5, 0.3], atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(2, 6), elements=st.floats(0, 1)))
    def test_monotone_scores_sum_to_one_without_clamping(self, s):
        s = np.sort(s)[::-1]
        p = ordinal_posterior(s)
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(p, np.concatenate([[1], s]) - np.concatenate([s, [0]]))

    def test_non_monotone_scores_clamped(self):
        p = ordinal_posterior([0.3, 0.6])
        assert np.all(p >= 0)
        assert p.sum() == pytest.approx(1.0)

    def test_trained_ordinal_model(self):
        rng = np.random.default_rng(0)
        y = np.arange(300) % 4
        X = np.column_stack([3.0 * y + rng.standard_normal(300), rng.standard_normal(300)])
        model = train_ordinal(X, y, 4, MaxPool(1))
        P = model.predict(X)
        np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        assert np.mean(P.argmax(axis=1) == y) > 0.8


class TestAggregation:
    def test_single_round_is_argmax(self):
        a_hat, _ = multi_round_aggregate([[0.3, 0.7]], [0.5, 0.5])
        assert a_hat == 1

    def test_hand_case(self):
        a_hat, scores = multi_round_aggregate([[0.9, 0.1], [0.8, 0.2]], [0.5, 0.5])
        assert a_hat == 0
        np.testing.assert_allclose(normalize_scores(scores), [0.72 / 0.74, 0.02 / 0.74], atol=1e-12)
        np.testing.assert_allclose(normalize_scores(scores), [0.973, 0.027], atol=1e-3)

    def test_uniform_tie_goes_to_lowest_index(self):
        a_hat, scores = multi_round_aggregate(np.full((4, 3), 1 / 3), np.ones(3) / 3)
        assert a_hat == 0
        np.testing.assert_allclose(normalize_scores(scores), 1 / 3)

    def test_matches_bayes_under_conditional_independence(self):
        # With P_i(a | g_i) from likelihoods L_i and prior p, the exact joint
        # posterior is p * prod L_i, normalized.
        rng = np.random.default_rng(0)
        prior = np.array([0.2, 0.5, 0.3])
        L = rng.random((4, 3))
        per_round = prior * L
        per_round /= per_round.sum(axis=1, keepdims=True)
        joint = prior * L.prod(axis=0)
        _, scores = multi_round_aggregate(per_round, prior)
        np.testing.assert_allclose(normalize_scores(scores), joint / joint.sum(), atol=1e-12)

    def test_batched_trials(self):
        P = np.random.default_rng(1).dirichlet(np.ones(2), size=(3, 5))
        a_hat, scores = multi_round_aggregate(P, [0.5, 0.5])
        assert a_hat.shape == (5,) and scores.shape == (5, 2)
        for t in range(5):
            assert multi_round_aggregate(P[:, t], [0.5, 0.5])[0] == a_hat[t]

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (3, 4), elements=st.floats(0.01, 1)), st.floats(-5, 5))
    def test_constant_shift_does_not_change_decision(self, P, c):
        P = P / P.sum(axis=1, keepdims=True)
        a_hat, scores = multi_round_aggregate(P, np.ones(4) / 4)
        np.testing.assert_allclose(normalize_scores(scores + c), normalize_scores(scores), atol=1e-12)
        assert np.argmax(scores + c) == a_hat


class TestUia:
    def test_identical_embeddings_give_uniform(self):
        np.testing.assert_allclose(posterior_from_embeddings(np.zeros(3), np.ones((5, 3))), 0.2)

    def test_matching_candidate_has_max(self):
        cands = np.random.default_rng(0).standard_normal((5, 4))
        assert posterior_from_embeddings(cands[3], cands).argmax() == 3

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000))
    def test_rotation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        obs, cands = rng.standard_normal(4), rng.standard_normal((5, 4))
        Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        np.testing.assert_allclose(
            posterior_from_embeddings(Q @ obs, cands @ Q.T), posterior_from_embeddings(obs, cands), atol=1e-12)

    def test_encoder_learns_separable_users(self):
        X, users = blobs(n=300, d=10, sep=4.0, m=6)
        enc = train_uia_encoder(X, users, embedding_dim=8, reducer=MaxPool(1), hidden=32)
        E = enc.embed(X)
        assert E.shape == (300, 8) and np.all(np.isfinite(E))
        assert np.mean(enc.net.predict_proba(enc.reducer.transform(X)).argmax(axis=1) == users) > 1 / 6
        centroids = np.stack([E[users == u].mean(axis=0) for u in range(6)])
        P = posterior_from_embeddings(E, np.broadcast_to(centroids, (300, 6, 8)))
        assert np.mean(P.argmax(axis=1) == users) > 0.9

    def test_encoder_needs_two_users(self):
        with pytest.raises(ValueError):
            train_uia_encoder(np.ones((5, 3)), np.zeros(5, dtype=int))

    def test_posterior_from_candidate_batches(self):
        theta = nn.init_network(nn.NetworkSpec((4, 3, 2), init_seed=2))
        rng = np.random.default_rng(0)
        batches = [nn.Batch(rng.standard_normal((3, 4)), rng.integers(0, 2, 3)) for _ in range(4)]
        grads = np.stack([nn.loss_and_gradient(theta, b)[1] for b in batches])
        enc = train_uia_encoder(np.repeat(grads, 5, axis=0), np.repeat(np.arange(4), 5), 4, MaxPool(1), hidden=8)
        p = uia_posterior(enc, grads[2], batches, theta)
        assert p.argmax() == 2
        np.testing.assert_allclose(p, uia_posterior_from_gradients(enc, grads[2], grads))
        with pytest.raises(ValueError):
            uia_posterior_from_gradients(enc, grads[0], grads[:1])


class TestTrainingPairs:
    def test_zero_pairs(self, shadow_setup):
        theta, shadow = shadow_setup
        G, labels = gen_attack_training_set(theta, shadow, AttackConfig("pia", k=4), n_pairs=0)
        assert G.shape == (0, theta.n) and labels.size == 0

    @pytest.mark.parametrize("n", [10, 31])
    def test_labels_balanced(self, shadow_setup, n):
        theta, shadow = shadow_setup
        _, labels = gen_attack_training_set(theta, shadow, AttackConfig("pia", k=4), n_pairs=n)
        counts = np.bincount(labels, minlength=2)
        assert counts.max() - counts.min() <= 1

    def test_refuses_private_split(self, shadow_setup):
        theta, shadow = shadow_setup
        private = shadow.subset(np.arange(len(shadow)), data.TRAIN)
        with pytest.raises(ValueError, match="private"):
            gen_attack_training_set(theta, private, AttackConfig("pia", k=4), n_pairs=4)

    def test_identity_adaptive_equals_static(self, shadow_setup):
        theta, shadow = shadow_setup
        cfg = AttackConfig("pia", k=4)
        static = gen_attack_training_set(theta, shadow, cfg, n_pairs=20, seed=5)
        adaptive = gen_attack_training_set(theta, shadow, adaptive_wrap(cfg, Identity()), n_pairs=20, seed=5)
        np.testing.assert_array_equal(static[0], adaptive[0])
        np.testing.assert_array_equal(static[1], adaptive[1])

    def test_sign_adaptive_pairs_are_ternary(self, shadow_setup):
        theta, shadow = shadow_setup
        G, _ = gen_attack_training_set(theta, shadow, adaptive_wrap(AttackConfig("pia", k=4), Sign()), n_pairs=20)
        assert set(np.unique(G)) <= {-1.0, 0.0, 1.0}

    def test_dp_adaptive_pairs_are_noisy_per_pair(self, shadow_setup):
        theta, shadow = shadow_setup
        cfg = AttackConfig("pia", k=4)
        raw, _ = gen_attack_training_set(theta, shadow, cfg, n_pairs=20, seed=1)
        noisy, _ = gen_attack_training_set(theta, shadow, adaptive_wrap(cfg, DPSGD(1.0, 0.5)), n_pairs=20, seed=1)
        diffs = noisy - raw
        assert np.all(np.linalg.norm(diffs, axis=1) > 0)
        assert not np.allclose(diffs[0], diffs[1])

    def test_dia_and_aia_labels(self, shadow_setup):
        theta, shadow = shadow_setup
        _, labels = gen_attack_training_set(theta, shadow, AttackConfig("dia", k=8, m=6), n_pairs=24)
        assert sorted(np.unique(labels)) == list(range(6))

    def test_deterministic_given_seed(self, shadow_setup):
        theta, shadow = shadow_setup
        cfg = AttackConfig("pia", k=4)
        a = gen_attack_training_set(theta, shadow, cfg, n_pairs=12, seed=9)
        b = gen_attack_training_set(theta, shadow, cfg, n_pairs=12, seed=9)
        np.testing.assert_array_equal(a[0], b[0])
