from dataclasses import replace

import numpy as np
import pytest

from gradinfer import data, defenses, game
from gradinfer.defenses import DPSGD, AdvPerturb, Identity, Prune, Sign
from gradinfer.metrics import report_from_posteriors

SMALL = dict(epochs=2, trials=150, n_pairs=120, hidden=(8,), k=8)


@pytest.fixture(scope="module")
def pia_data():
    return game.synthetic_game_data(data.SyntheticSpec(), "pia")


@pytest.fixture(scope="module")
def small_result(pia_data):
    return game.run_inference_game(game.GameConfig(**SMALL), pia_data)


class TestConfig:
    def test_all_errors_reported(self):
        with pytest.raises(ValueError) as exc:
            game.GameConfig(epochs=0, trials=0, k=0)
        msg = str(exc.value)
        assert "epochs" in msg and "trials" in msg and "batch size" in msg

    def test_rounds_must_be_within_epochs(self):
        with pytest.raises(ValueError, match="observable rounds"):
            game.GameConfig(epochs=3, rounds=(4,))

    def test_default_rounds_are_all_epochs(self):
        assert game.GameConfig(epochs=4).observed == (1, 2, 3, 4)
        assert game.GameConfig(epochs=4, rounds=(3, 1, 3)).observed == (1, 3)

    def test_shadow_from_private_split_rejected(self, pia_data):
        with pytest.raises(ValueError):
            replace(pia_data, shadow=pia_data.train)


class TestGame:
    def test_shapes(self, small_result):
        assert len(small_result.trials) == 150
        assert small_result.round_posteriors().shape == (2, 150, 2)
        assert small_result.rounds == (1, 2)
        assert len(small_result.thetas) == 3

    def test_deterministic(self, pia_data, small_result):
        again = game.run_inference_game(game.GameConfig(**SMALL), pia_data)
        np.testing.assert_array_equal(again.round_posteriors(), small_result.round_posteriors())
        np.testing.assert_array_equal(again.truths, small_result.truths)

    def test_worker_count_does_not_matter(self, pia_data, small_result):
        par = game.run_inference_game(game.GameConfig(**SMALL, workers=3), pia_data)
        np.testing.assert_array_equal(par.round_posteriors(), small_result.round_posteriors())

    def test_trial_draws_fixed_across_defenses(self, pia_data):
        cfg = game.GameConfig(**SMALL)
        prior = game.game_prior(cfg, pia_data)
        a = game.draw_trials(cfg, pia_data, prior)
        b = game.draw_trials(replace(cfg, defense=Sign()), pia_data, prior)
        np.testing.assert_array_equal(a.idx, b.idx)
        assert np.all(pia_data.train.a[a.idx] == a.a[:, None])

    def test_posteriors_are_distributions(self, small_result):
        P = small_result.round_posteriors()
        np.testing.assert_allclose(P.sum(axis=-1), 1.0, atol=1e-9)

    def test_attack_models_never_see_private_split(self, pia_data, monkeypatch):
        seen = []
        original = game.gen_attack_training_set

        def spy(theta, shadow, *args, **kwargs):
            seen.append(shadow.provenance)
            return original(theta, shadow, *args, **kwargs)

        monkeypatch.setattr(game, "gen_attack_training_set", spy)
        game.run_inference_game(game.GameConfig(**SMALL, defense=AdvPerturb(), adaptive=True), pia_data)
        assert seen and data.TRAIN not in seen

    def test_utility_training_improves_task(self, small_result, pia_data):
        first, last = small_result.thetas[0], small_result.thetas[-1]
        assert game.task_auroc(last, pia_data.test) > game.task_auroc(first, pia_data.test)

    def test_strong_signal_pia(self, pia_data):
        cfg = game.GameConfig(epochs=3, trials=1000)
        rep = game.evaluate_game(game.run_inference_game(cfg, pia_data))
        assert rep.auroc > 0.9

    @pytest.mark.parametrize("attack", ["aia", "dia", "uia"])
    def test_other_attacks_run_and_beat_chance(self, attack):
        gd = game.synthetic_game_data(data.SyntheticSpec(), attack, n=4000, shadow_size=400)
        cfg = game.GameConfig(attack=attack, epochs=1, trials=200, n_pairs=300, hidden=(8,), k=8)
        res = game.run_inference_game(cfg, gd)
        m = {"aia": 2, "dia": 6, "uia": 5}[attack]
        assert res.round_posteriors().shape == (1, 200, m)
        assert game.evaluate_game(res).asr > 1.0 / m


class TestEvaluate:
    def _result(self, P, truths, prior):
        from gradinfer.attacks import multi_round_aggregate
        P = np.asarray(P, dtype=float)
        a_hat, scores = multi_round_aggregate(P, prior)
        trials = [game.TrialRecord(int(a), P[:, t], int(a_hat[t]), scores[t]) for t, a in enumerate(truths)]
        return game.GameResult(game.GameConfig(), trials, tuple(range(1, P.shape[0] + 1)), np.asarray(prior), [], None, [])

    def test_all_correct(self):
        res = self._result(np.eye(2)[[[0, 1, 1, 0]]], [0, 1, 1, 0], [0.5, 0.5])
        rep = game.evaluate_game(res)
        assert rep.asr == 1.0 and rep.advantage == 1.0

    def test_prior_posteriors_have_no_advantage(self):
        prior = [0.4, 0.6]
        res = self._result(np.tile(prior, (3, 10, 1)), [0, 1, 1, 0, 1, 1, 0, 1, 0, 1], prior)
        assert game.evaluate_game(res).advantage == 0.0

    def test_single_round_multi_equals_per_round(self, pia_data):
        res = game.run_inference_game(game.GameConfig(**{**SMALL, "epochs": 2}, rounds=(2,)), pia_data)
        assert game.evaluate_game(res) == game.evaluate_game(res, "per-round")[0]

    def test_cumulative_last_equals_multi_round(self, small_result):
        assert game.cumulative_reports(small_result)[-1] == game.evaluate_game(small_result)

    def test_per_round_matches_direct_report(self, small_result):
        P = small_result.round_posteriors()
        for i, rep in enumerate(game.evaluate_game(small_result, "per-round")):
            assert rep == report_from_posteriors(P[i], small_result.truths, small_result.prior)

    def test_unknown_mode(self, small_result):
        with pytest.raises(ValueError):
            game.evaluate_game(small_result, "best-round")


class TestDefenseEval:
    def test_identity_static_equals_adaptive(self, pia_data):
        cells = game.run_defense_eval(game.GameConfig(**SMALL), pia_data, [Identity()])
        static, adaptive = cells
        assert (static.mode, adaptive.mode) == ("static", "adaptive")
        assert static.report == adaptive.report
        assert static.task_auroc == adaptive.task_auroc

    def test_one_cell_per_defense_and_mode(self, pia_data):
        cells = game.run_defense_eval(game.GameConfig(**{**SMALL, "epochs": 1}), pia_data, [Sign(), Prune(0.9)])
        assert [(c.defense, c.mode) for c in cells] == [
            ("sign", "static"), ("sign", "adaptive"),
            ("prune(rate=0.9)", "static"), ("prune(rate=0.9)", "adaptive"),
        ]

    def test_sign_adaptive_beats_static(self, pia_data):
        cells = game.run_defense_eval(game.GameConfig(epochs=1, trials=1000), pia_data, [Sign()])
        assert cells[1].report.advantage > cells[0].report.advantage

    def test_vib_and_dp_games_run(self, pia_data):
        cfg = game.GameConfig(**{**SMALL, "epochs": 1})
        for d in (defenses.VIB(0.01, 4), DPSGD(2.0, 0.5)):
            res = game.run_inference_game(replace(cfg, defense=d, adaptive=True), pia_data)
            assert np.all(np.isfinite(res.round_posteriors()))


@pytest.fixture(scope="module")
def points(pia_data):
    base = game.GameConfig(epochs=3, rounds=(1,), trials=200, n_pairs=200)
    return game.privacy_utility_sweep(base, pia_data, {"dpsgd": defenses.SWEEP_PROFILES["dpsgd"]}, ("static",))


class TestSweep:
    def test_identity_point_included_and_best(self, points):
        assert points[0]["family"] == "identity"
        assert points[0]["task_auroc"] == max(p["task_auroc"] for p in points)

    def test_dp_utility_nonincreasing_in_sigma(self, points):
        by_sigma = sorted((float(p["defense"].split("sigma=")[1].rstrip(")")), p["task_auroc"])
                          for p in points if p["family"] == "dpsgd")
        for (_, lo_noise), (_, hi_noise) in zip(by_sigma, by_sigma[1:]):
            assert hi_noise <= lo_noise + 0.02
