import math

import numpy as np
import pytest

from incrhaz.core import ConstantShift, Dataset, StepCumHazard, ThetaGrid
from incrhaz.errors import ConfigError, FitError, NumericError
from incrhaz.estimators import estimate_aipw, estimate_ipw, normal_quantile
from incrhaz.inference import (
    BandResult,
    bayesian_bootstrap_se,
    global_null_pvalue,
    ipw_with_weights,
    multiplier_critical_value,
    multiplier_sups,
    uniform_band,
)
from incrhaz.nuisance import LearnerConfig, fit_hazard
from incrhaz.sim import SCENARIOS, draw_dataset, null_dataset

TAU = 2.0
SCEN2 = SCENARIOS["theta2"]


def synthetic_band(psi, se, boot_sups, alpha=0.05, c_alpha=2.0, n=100):
    """Assemble a BandResult by hand (sigma scaled so se = sigma/sqrt(n))."""
    psi = np.asarray(psi, dtype=float)
    se = np.asarray(se, dtype=float)
    sigma = se * math.sqrt(n)
    half = c_alpha * se
    return BandResult(
        thetas=np.linspace(0.5, 1.5, psi.size), psi_hat=psi, sigma_hat=sigma,
        c_alpha=c_alpha, lower=psi - half, upper=psi + half, alpha=alpha,
        B=len(boot_sups), seed=0, n=n, estimator="aipw",
        boot_sups=np.asarray(boot_sups, dtype=float),
    )


class TestMultiplierBootstrap:
    def test_single_point_critical_value_is_normal_quantile(self):
        # one grid point, phi ~ N(0,1): sup reduces to |mean multiplier
        # process|, whose 95% quantile is the two-sided normal cutoff
        rng = np.random.default_rng(0)
        phi = rng.normal(size=(2000, 1))
        psi = phi.mean(axis=0)
        sigma = phi.std(axis=0)
        c, sups = multiplier_critical_value(phi, psi, sigma, alpha=0.05,
                                            B=10_000, seed=1)
        assert c == pytest.approx(1.959963984540054, abs=0.05)
        assert sups.shape == (10_000,)
        assert np.all(sups >= 0)

    def test_duplicated_grid_column_changes_nothing(self):
        rng = np.random.default_rng(3)
        phi = rng.normal(size=(400, 2))
        phi2 = np.column_stack([phi, phi[:, 1]])

        def crit(p):
            psi = p.mean(axis=0)
            return multiplier_critical_value(p, psi, p.std(axis=0),
                                             alpha=0.05, B=500, seed=9)

        c_a, sups_a = crit(phi)
        c_b, sups_b = crit(phi2)
        assert c_b == c_a
        assert np.array_equal(sups_a, sups_b)

    def test_nonincreasing_in_alpha(self):
        rng = np.random.default_rng(5)
        phi = rng.normal(size=(300, 4))
        psi = phi.mean(axis=0)
        sigma = phi.std(axis=0)
        cs = [multiplier_critical_value(phi, psi, sigma, alpha, 400, seed=2)[0]
              for alpha in (0.01, 0.05, 0.2, 0.5)]
        assert cs[0] >= cs[1] >= cs[2] >= cs[3]

    def test_draws_keyed_by_index_not_count(self):
        rng = np.random.default_rng(8)
        phi = rng.normal(size=(100, 3))
        psi = phi.mean(axis=0)
        sigma = phi.std(axis=0)
        sups_big = multiplier_sups(phi, psi, sigma, B=250, seed=4)
        sups_small = multiplier_sups(phi, psi, sigma, B=150, seed=4)
        # same multipliers draw for draw; only matmul batching noise differs
        assert sups_big[:150] == pytest.approx(sups_small, rel=1e-13)

    def test_reproducible(self):
        rng = np.random.default_rng(11)
        phi = rng.normal(size=(200, 2))
        psi = phi.mean(axis=0)
        sigma = phi.std(axis=0)
        a = multiplier_sups(phi, psi, sigma, B=300, seed=7)
        b = multiplier_sups(phi, psi, sigma, B=300, seed=7)
        c = multiplier_sups(phi, psi, sigma, B=300, seed=8)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_gaussian_multiplier_mean_sup(self):
        # with a single unit and Z = 1 the sup is |xi| itself; gaussian
        # multipliers then have E|xi| = sqrt(2/pi)
        phi = np.array([[1.0]])
        sups = multiplier_sups(phi, np.array([0.0]), np.array([1.0]),
                               B=10_000, seed=3, multiplier="gaussian")
        assert sups.mean() == pytest.approx(math.sqrt(2 / math.pi), abs=4 / 100)

    def test_rademacher_multiplier_is_unit_magnitude(self):
        phi = np.array([[1.0]])
        sups = multiplier_sups(phi, np.array([0.0]), np.array([1.0]),
                               B=200, seed=3, multiplier="rademacher")
        assert np.all(sups == 1.0)

    def test_validation(self):
        phi = np.random.default_rng(0).normal(size=(50, 2))
        psi = phi.mean(axis=0)
        sigma = phi.std(axis=0)
        with pytest.raises(ConfigError, match="100"):
            multiplier_critical_value(phi, psi, sigma, alpha=0.05, B=99, seed=0)
        with pytest.raises(ConfigError, match="alpha"):
            multiplier_critical_value(phi, psi, sigma, alpha=1.5, B=200, seed=0)
        with pytest.raises(ConfigError, match="multiplier"):
            multiplier_sups(phi, psi, sigma, B=100, seed=0, multiplier="wild")
        with pytest.raises(NumericError, match="grid index 1"):
            multiplier_sups(phi, psi, np.array([1.0, 0.0]), B=100, seed=0)


class TestUniformBand:
    def test_band_contains_pointwise_wald(self):
        ds = draw_dataset(400, seed=6)
        grid = ThetaGrid.constant(np.linspace(0.6, 1.4, 9), tau=TAU)
        band = uniform_band(ds, grid, estimator="aipw", B=500, seed=0)
        z = normal_quantile(0.975)
        assert band.c_alpha >= z  # simultaneous >= pointwise
        assert np.all(band.upper - band.lower >= 2 * z * band.se - 1e-12)
        assert np.all(band.lower <= band.psi_hat) and np.all(band.psi_hat <= band.upper)

    def test_identity_point_recovers_sample_mean(self):
        ds = draw_dataset(300, seed=2)
        grid = ThetaGrid.constant([0.8, 1.0, 1.25], tau=TAU)
        band = uniform_band(ds, grid, estimator="aipw", B=200, seed=0)
        g = list(grid.labels).index(1.0)
        # phi at the identity is y exactly; the matrix-mean accumulation
        # order can still move the average by an ulp
        assert band.psi_hat[g] == pytest.approx(ds.y.mean(), rel=1e-15)

    def test_crossfit_band_matches_config(self):
        ds = draw_dataset(250, seed=4)
        grid = ThetaGrid.constant([0.7, 1.0, 1.3], tau=TAU)
        band = uniform_band(ds, grid, learners=LearnerConfig(K=3, seed=11),
                            estimator="aipw_cf", B=150, seed=5)
        assert band.estimator == "aipw_cf"
        assert band.B == 150 and band.n == 250
        again = uniform_band(ds, grid, learners=LearnerConfig(K=3, seed=11),
                             estimator="aipw_cf", B=150, seed=5)
        assert np.array_equal(band.psi_hat, again.psi_hat)
        assert np.array_equal(band.boot_sups, again.boot_sups)
        assert band.c_alpha == again.c_alpha

    def test_unknown_estimator(self):
        ds = draw_dataset(50, seed=0)
        grid = ThetaGrid.constant([0.9, 1.1], tau=TAU)
        with pytest.raises(ConfigError, match="ipw"):
            uniform_band(ds, grid, estimator="ipw", B=200)

    def test_constant_outcome_degenerates(self):
        ds = draw_dataset(80, seed=1)
        flat = Dataset(np.full(ds.n, 2.0), ds.u, ds.delta, ds.l, tau=TAU)
        grid = ThetaGrid.constant([0.9, 1.0, 1.1], tau=TAU)
        with pytest.raises(NumericError, match="sigma"):
            uniform_band(flat, grid, estimator="aipw", B=200)

    def test_covers_and_rows(self):
        band = synthetic_band([1.0, 1.2], [0.1, 0.1], [0.5] * 100, c_alpha=2.0)
        assert band.covers([1.1, 1.1])
        assert not band.covers([1.3, 1.2])
        rows = band.to_rows()
        assert [r["theta"] for r in rows] == [0.5, 1.5]
        assert rows[0]["lower"] == pytest.approx(0.8)
        assert rows[1]["upper"] == pytest.approx(1.4)


class TestGlobalNull:
    def test_two_point_hand_value(self):
        band = synthetic_band([0.0, 1.0], [1.0, 1.0],
                              boot_sups=[0.1, 0.3, 0.6, 0.9], n=1)
        p, q_star = global_null_pvalue(band)
        assert q_star == pytest.approx(0.5, abs=1e-9)
        assert p == 0.5  # two of four sups clear 0.5

    def test_flat_curve_gives_p_one(self):
        band = synthetic_band([0.7, 0.7, 0.7], [0.2, 0.1, 0.3],
                              boot_sups=np.linspace(0.01, 3, 100))
        p, q_star = global_null_pvalue(band)
        assert q_star == 0.0
        assert p == 1.0

    def test_matches_pairwise_closed_form(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            G = int(rng.integers(2, 12))
            psi = rng.normal(size=G)
            se = rng.uniform(0.05, 2.0, size=G)
            band = synthetic_band(psi, se, boot_sups=[1.0], n=4)
            _, q_star = global_null_pvalue(band)
            closed = max((psi[i] - psi[j]) / (se[i] + se[j])
                         for i in range(G) for j in range(G) if i != j)
            assert q_star == pytest.approx(max(closed, 0.0), abs=1e-9)

    def test_band_duality_on_data(self):
        # p <= alpha exactly when no horizontal line fits inside the band
        grid = ThetaGrid.constant(np.linspace(0.6, 1.4, 11), tau=TAU)
        for maker, seed in [(draw_dataset, 3), (null_dataset, 3)]:
            ds = maker(600, seed=seed)
            band = uniform_band(ds, grid, estimator="aipw", B=400, seed=1)
            p, q_star = global_null_pvalue(band)
            line_fits = np.max(band.lower) <= np.min(band.upper) + 1e-12
            assert (p > band.alpha) == bool(line_fits) or q_star == band.c_alpha

    def test_sloped_truth_rejected_null_truth_retained(self):
        grid = ThetaGrid.constant(np.linspace(0.6, 1.4, 11), tau=TAU)
        sloped = uniform_band(draw_dataset(2000, seed=5), grid,
                              estimator="aipw", B=500, seed=2)
        flat = uniform_band(null_dataset(2000, seed=5), grid,
                            estimator="aipw", B=500, seed=2)
        p_sloped, _ = global_null_pvalue(sloped)
        p_flat, _ = global_null_pvalue(flat)
        assert p_sloped < 0.05
        assert p_flat > 0.05


class TestBayesianBootstrap:
    def test_uniform_weights_reproduce_point_estimate(self):
        ds = draw_dataset(200, seed=7)
        lam = fit_hazard(ds, "cox")
        shift = ConstantShift(0.8, TAU)
        val = ipw_with_weights(ds, shift, lam, np.ones(ds.n))
        assert val == pytest.approx(estimate_ipw(ds, shift, lam).psi_hat, rel=1e-14)

    def test_weight_validation(self):
        ds = draw_dataset(20, seed=7)
        lam = fit_hazard(ds, "nelson-aalen")
        shift = ConstantShift(0.8, TAU)
        with pytest.raises(ConfigError):
            ipw_with_weights(ds, shift, lam, np.ones(ds.n - 1))
        w = np.ones(ds.n)
        w[3] = -0.5
        with pytest.raises(ConfigError):
            ipw_with_weights(ds, shift, lam, w)

    def test_degenerate_data_gives_zero_se(self):
        # all outcomes equal and nobody initiates: every reweighted fit has
        # no jumps, every unit weight is 1, every draw returns the constant
        n = 30
        ds = Dataset(np.full(n, 1.5), np.full(n, TAU), np.zeros(n),
                     np.linspace(0, 2, n)[:, None], tau=TAU)
        se = bayesian_bootstrap_se(ds, ConstantShift(0.5, TAU),
                                   hazard="nelson-aalen", B=60, seed=0)
        assert se == pytest.approx(0.0, abs=1e-14)  # weighted-mean rounding only

    def test_matches_published_scale_at_n5000(self):
        ds = draw_dataset(5000, seed=55)
        se = bayesian_bootstrap_se(ds, SCEN2.shift(), hazard="cox", B=200, seed=1)
        assert 0.0117 <= se <= 0.0196  # 0.0157 +- 25%

    def test_deterministic(self):
        ds = draw_dataset(150, seed=9)
        shift = ConstantShift(1.3, TAU)
        a = bayesian_bootstrap_se(ds, shift, hazard="nelson-aalen", B=80, seed=5)
        b = bayesian_bootstrap_se(ds, shift, hazard="nelson-aalen", B=80, seed=5)
        c = bayesian_bootstrap_se(ds, shift, hazard="nelson-aalen", B=80, seed=6)
        assert a == b
        assert a != c
        assert a > 0

    def test_minimum_draws(self):
        ds = draw_dataset(50, seed=1)
        with pytest.raises(ConfigError, match="50"):
            bayesian_bootstrap_se(ds, ConstantShift(1.0, TAU), B=49)

    def test_fragile_fits_surface_as_fit_error(self):
        # duplicated covariate column: the reweighted Cox information matrix
        # is singular in every draw, so the failure budget is exhausted
        base = draw_dataset(40, seed=13)
        ds = Dataset(base.y, base.u, base.delta,
                     np.column_stack([base.l, base.l]), tau=TAU)
        with pytest.raises(FitError, match="failed"):
            bayesian_bootstrap_se(ds, ConstantShift(1.2, TAU), hazard="cox", B=60)
