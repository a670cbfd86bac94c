import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incrhaz.core import Dataset
from incrhaz.errors import ConfigError, FitError, NumericError
from incrhaz.nuisance import (
    LearnerConfig,
    fit_cox,
    fit_cox_flex,
    fit_hazard,
    fit_nelson_aalen,
    fit_outcome,
    make_folds,
)
from incrhaz.sim import draw_dataset


def toy(y, u, delta, l, tau=2.0):
    return Dataset(y, u, delta, l, tau=tau)


class TestNelsonAalen:
    def test_single_event_time(self):
        ds = toy([0.0, 0.0, 0.0], [1.0, 2.0, 2.0], [1, 0, 0],
                 [[0.0], [0.0], [0.0]])
        lam = fit_nelson_aalen(ds)
        assert lam.jump_times.tolist() == [1.0]
        assert lam.base_increments.tolist() == [1.0 / 3.0]

    def test_two_event_times(self):
        ds = toy([0.0, 0.0, 0.0], [0.5, 1.5, 2.0], [1, 1, 0],
                 [[0.0], [0.0], [0.0]])
        lam = fit_nelson_aalen(ds)
        assert lam.jump_times.tolist() == [0.5, 1.5]
        # risk sets of size 3 then 2
        assert lam.base_increments.tolist() == [1.0 / 3.0, 1.0 / 2.0]

    def test_tied_events_pool(self):
        ds = toy([0.0] * 4, [1.0, 1.0, 1.0, 2.0], [1, 1, 1, 0],
                 [[0.0]] * 4)
        lam = fit_nelson_aalen(ds)
        assert lam.jump_times.tolist() == [1.0]
        assert lam.base_increments.tolist() == [3.0 / 4.0]

    def test_no_events(self):
        ds = toy([1.0, 2.0], [2.0, 2.0], [0, 0], [[0.0], [0.0]])
        lam = fit_nelson_aalen(ds)
        assert lam.jump_times.size == 0
        assert lam(2.0, [0.0]) == 0.0

    def test_case_weights(self):
        ds = toy([0.0, 0.0, 0.0], [1.0, 2.0, 2.0], [1, 0, 0], [[0.0]] * 3)
        lam = fit_nelson_aalen(ds, weights=[2.0, 1.0, 1.0])
        assert lam.base_increments.tolist() == [0.5]  # 2 / (2+1+1)
        # zero weight on the only event removes the jump
        lam0 = fit_nelson_aalen(ds, weights=[0.0, 1.0, 1.0])
        assert lam0.jump_times.size == 0

    def test_km_log_close_to_na_when_risks_large(self):
        ds = draw_dataset(400, seed=11)
        na = fit_nelson_aalen(ds)
        km = fit_nelson_aalen(ds, km_log=True)
        assert km.jump_times.tolist() == na.jump_times.tolist()
        assert np.all(km.base_increments >= na.base_increments)
        assert km(2.0, [0.0]) == pytest.approx(na(2.0, [0.0]), rel=0.02)

    def test_km_log_blows_up_when_risk_set_exhausted(self):
        ds = toy([0.0, 0.0], [0.5, 1.0], [1, 1], [[0.0], [0.0]])
        with pytest.raises(NumericError, match="nelson-aalen"):
            fit_nelson_aalen(ds, km_log=True)


class TestCox:
    def test_recovers_dgp_coefficient(self):
        ds = draw_dataset(5000, seed=0)
        fit = fit_cox(ds)
        assert fit.beta[0] == pytest.approx(0.2, abs=0.03)
        assert fit.grad_norm < 1e-8

    def test_baseline_anchored_at_zero_covariates(self):
        ds = draw_dataset(5000, seed=0)
        fit = fit_cox(ds)
        lam = fit.cum_hazard
        # true baseline at l=0 is t; Breslow at n=5000 should be close
        assert lam(1.0, [0.0]) == pytest.approx(1.0, abs=0.1)
        assert lam(1.0, [1.0]) == pytest.approx(lam(1.0, [0.0]) * math.exp(fit.beta[0]),
                                                rel=1e-12)

    def test_constant_covariate_reduces_to_nelson_aalen(self):
        ds = toy([0.0, 0.0, 0.0], [1.0, 2.0, 2.0], [1, 0, 0],
                 [[0.7], [0.7], [0.7]])
        fit = fit_cox(ds)
        assert fit.beta.tolist() == [0.0]
        na = fit_nelson_aalen(ds)
        assert fit.cum_hazard(2.0, [0.7]) == pytest.approx(na(2.0, [0.7]), rel=1e-12)

    def test_two_unit_toy_against_grid_search(self):
        # One event whose covariate sits below the other unit's: the partial
        # log-likelihood is -log(1 + exp(beta)), monotone decreasing, so the
        # score never crosses zero at finite beta. The fit should stop where
        # the score is numerically zero, which means its achieved likelihood
        # matches a brute-force grid maximizer to the same tolerance.
        ds = toy([0.0, 0.0], [1.0, 2.0], [1, 0], [[0.0], [1.0]])

        def pll(beta):
            return -math.log(1.0 + math.exp(beta))

        grid = np.linspace(-20, 20, 4001)
        vals = np.array([pll(b) for b in grid])
        assert np.all(np.diff(vals) < 0)  # monotone: no interior maximum

        fit = fit_cox(ds)
        assert fit.grad_norm < 1e-8
        assert fit.beta[0] < -10  # driven toward the monotone direction
        assert fit.loglik >= vals.max() - 1e-7

    def test_no_covariates_rejected(self):
        ds = Dataset([0.0, 0.0], [1.0, 2.0], [1, 0], np.empty((2, 0)), tau=2.0)
        with pytest.raises(ConfigError):
            fit_cox(ds)

    def test_warm_start_agrees_with_cold(self):
        ds = draw_dataset(800, seed=4)
        cold = fit_cox(ds)
        warm = fit_cox(ds, beta0=cold.beta)
        assert warm.beta == pytest.approx(cold.beta, abs=1e-10)
        assert warm.iterations <= cold.iterations

    def test_warm_start_shape_checked(self):
        ds = draw_dataset(100, seed=4)
        with pytest.raises(ConfigError):
            fit_cox(ds, beta0=[0.1, 0.2])

    def test_flexible_fit_matches_plain_when_time_terms_vanish(self):
        ds = draw_dataset(2000, seed=7)
        plain = fit_cox(ds)
        flex = fit_cox_flex(ds, degree=2)
        # DGP multiplier is time-constant, so the flexible fit should land
        # near the plain one at representative points.
        for t, l in [(0.5, 0.3), (1.0, 1.0), (1.8, 1.7)]:
            assert flex.cum_hazard(t, [l]) == pytest.approx(
                plain.cum_hazard(t, [l]), rel=0.15)

    def test_dispatcher(self):
        ds = draw_dataset(300, seed=2)
        assert fit_hazard(ds, "cox").beta is not None
        assert fit_hazard(ds, "nelson-aalen").beta is None
        assert fit_hazard(ds, "cox-flex") is not None
        with pytest.raises(ConfigError):
            fit_hazard(ds, "weibull")


class TestOutcome:
    def test_linear_recovers_noiseless_plane(self):
        rng = np.random.default_rng(5)
        n = 50
        u = rng.uniform(0, 2, n)
        l = rng.uniform(0, 2, (n, 1))
        delta = np.ones(n)
        delta[u >= 2.0] = 0
        u = np.where(delta == 1, u, 2.0)
        y = 1.0 + u - 0.6 * l[:, 0]
        ds = Dataset(y, u, delta, l, tau=2.0)
        mu = fit_outcome(ds, "linear")
        assert mu.coef == pytest.approx([1.0, 1.0, -0.6], abs=1e-10)
        assert mu.predict(0.5, [1.0]) == pytest.approx(1.0 + 0.5 - 0.6, abs=1e-10)

    def test_linear_singular_design(self):
        ds = toy([1.0, 2.0], [1.0, 1.0], [1, 1], [[1.0], [1.0]])
        with pytest.raises(FitError, match="singular"):
            fit_outcome(ds, "linear")

    def test_constant_response_predicts_constant(self):
        for c, learner in [(0.0, "linear"), (1.0, "logistic"), (0.0, "logistic"),
                           (0.3, "kernel")]:
            y = np.full(6, c)
            ds = toy(y, [0.2, 0.5, 0.9, 1.3, 1.7, 2.0], [1, 1, 1, 1, 1, 0],
                     [[1.1], [0.4], [1.8], [0.2], [1.6], [0.9]])
            mu = fit_outcome(ds, learner)
            pred = mu.predict_matrix(np.array([0.3, 1.5]),
                                     np.array([[0.5], [1.5]]))
            assert pred == pytest.approx(np.full((2, 2), c), abs=1e-12)

    def test_logistic_requires_binary(self):
        ds = toy([0.5, 1.0], [1.0, 2.0], [1, 0], [[0.0], [1.0]])
        with pytest.raises(ConfigError, match="0, 1"):
            fit_outcome(ds, "logistic")

    def test_logistic_separation(self):
        # y perfectly ordered by l: MLE at infinity
        ds = toy([0.0, 0.0, 1.0, 1.0], [0.5, 0.6, 0.7, 0.8], [1, 1, 1, 1],
                 [[0.0], [0.1], [1.9], [2.0]])
        with pytest.raises(FitError):
            fit_outcome(ds, "logistic")

    def test_logistic_matches_truth_in_large_sample(self):
        rng = np.random.default_rng(9)
        n = 20_000
        u = rng.uniform(0, 2, n)
        l = rng.uniform(0, 2, (n, 1))
        eta = -0.5 + 0.8 * u + 0.4 * l[:, 0]
        y = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
        ds = Dataset(y, u, np.ones(n), l, tau=2.5)
        mu = fit_outcome(ds, "logistic")
        assert mu.coef == pytest.approx([-0.5, 0.8, 0.4], abs=0.1)

    def test_kernel_interpolates_with_tiny_bandwidth(self):
        ds = toy([1.0, -2.0, 0.5], [0.3, 1.0, 1.7], [1, 1, 1],
                 [[0.2], [1.0], [1.8]])
        mu = fit_outcome(ds, "kernel", bandwidths=[1e-4, 1e-4])
        for i in range(3):
            assert mu.predict(ds.u[i], ds.l[i]) == pytest.approx(ds.y[i], abs=1e-12)

    def test_kernel_smooths_toward_mean_with_huge_bandwidth(self):
        ds = draw_dataset(200, seed=1)
        mu = fit_outcome(ds, "kernel", bandwidths=[1e6, 1e6])
        assert mu.predict(1.0, [1.0]) == pytest.approx(ds.y.mean(), rel=1e-6)

    def test_kernel_bandwidth_validation(self):
        ds = draw_dataset(50, seed=1)
        with pytest.raises(ConfigError):
            fit_outcome(ds, "kernel", bandwidths=[0.1])
        with pytest.raises(ConfigError):
            fit_outcome(ds, "kernel", bandwidths=[0.1, -0.1])

    def test_unknown_learner(self):
        ds = draw_dataset(50, seed=1)
        with pytest.raises(ConfigError, match="random-forest"):
            fit_outcome(ds, "random-forest")

    def test_fold_tag_carried(self):
        ds = draw_dataset(50, seed=1)
        assert fit_outcome(ds, "linear", fold=3).fold == 3
        assert fit_outcome(ds, "linear").fold is None


class TestFolds:
    def test_partition_and_balance(self):
        plan = make_folds(103, 5, seed=0)
        sizes = [plan.fold_indices(k).size for k in range(5)]
        assert sum(sizes) == 103
        assert max(sizes) - min(sizes) <= 1
        all_idx = np.sort(np.concatenate([plan.fold_indices(k) for k in range(5)]))
        assert np.array_equal(all_idx, np.arange(103))

    def test_train_indices_complement(self):
        plan = make_folds(20, 4, seed=3)
        for k in range(4):
            test = set(plan.fold_indices(k).tolist())
            train = set(plan.train_indices(k).tolist())
            assert test.isdisjoint(train)
            assert test | train == set(range(20))

    def test_deterministic_in_seed(self):
        a = make_folds(57, 3, seed=42)
        b = make_folds(57, 3, seed=42)
        c = make_folds(57, 3, seed=43)
        assert np.array_equal(a.assignment, b.assignment)
        assert not np.array_equal(a.assignment, c.assignment)

    def test_bad_K(self):
        with pytest.raises(ConfigError):
            make_folds(10, 1, seed=0)
        with pytest.raises(ConfigError):
            make_folds(10, 11, seed=0)

    @given(n=st.integers(4, 200), K=st.integers(2, 6), seed=st.integers(0, 999))
    @settings(max_examples=50, deadline=None)
    def test_every_unit_in_exactly_one_fold(self, n, K, seed):
        if K > n:
            return
        plan = make_folds(n, K, seed)
        counts = np.zeros(n, dtype=int)
        for k in range(K):
            counts[plan.fold_indices(k)] += 1
        assert np.all(counts == 1)


class TestLearnerConfig:
    def test_defaults(self):
        cfg = LearnerConfig()
        assert cfg.hazard == "cox" and cfg.outcome == "linear"
        assert cfg.K == 5 and cfg.seed == 0

    def test_validation(self):
        with pytest.raises(ConfigError):
            LearnerConfig(hazard="weibull")
        with pytest.raises(ConfigError):
            LearnerConfig(outcome="tree")
        with pytest.raises(ConfigError):
            LearnerConfig(K=1)

    def test_json_roundtrip(self):
        cfg = LearnerConfig(hazard="nelson-aalen", outcome="kernel", K=3, seed=7)
        assert LearnerConfig.from_json(cfg.to_json()) == cfg

    def test_from_json_rejects_unknown_keys(self):
        with pytest.raises(ConfigError, match="bandwidth"):
            LearnerConfig.from_json({"hazard": "cox", "bandwidth": 0.1})
