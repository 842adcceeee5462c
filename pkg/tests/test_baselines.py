import csv
import math

import numpy as np
import pytest

from refsel.baselines import (
    BayesStepConfig,
    LassoFit,
    StepConfig,
    _steplm_trace,
    aic,
    bayes_pvalue,
    bayes_stepwise,
    lasso_cv,
    ols_fit,
    steplm,
    write_selected_sets_csv,
)
from refsel.datagen import Dataset, GenConfig, gen_latent_regression
from refsel.errors import ConfigError, DataError, EstimationError
from refsel.refmodel import McmcConfig

from helpers import fake_linear_reference


def orthonormal_design(n, p, seed):
    """Columns orthogonal to each other and to the intercept; pop std 1."""
    rng = np.random.default_rng(seed)
    M = np.column_stack([np.ones(n), rng.normal(size=(n, p))])
    Q, _ = np.linalg.qr(M)
    return Q[:, 1:] * math.sqrt(n)


class TestOlsFit:
    def test_target_in_span_gives_zero_rss(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(12, 3))
        y = X @ np.array([1.0, -2.0, 0.5])
        beta, rss, df = ols_fit(X, y)
        assert rss == pytest.approx(0.0, abs=1e-16)
        assert df == 3
        assert beta == pytest.approx([1.0, -2.0, 0.5])

    def test_orthonormal_design_projection(self):
        rng = np.random.default_rng(1)
        Q, _ = np.linalg.qr(rng.normal(size=(20, 4)))
        y = rng.normal(size=20)
        beta, _, _ = ols_fit(Q, y)
        assert beta == pytest.approx(Q.T @ y, abs=1e-10)

    def test_normal_equations_oracle(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(5, 3))
        y = rng.normal(size=5)
        beta, rss, df = ols_fit(X, y)
        oracle = np.linalg.solve(X.T @ X, X.T @ y)
        assert np.max(np.abs(beta - oracle)) < 1e-8
        assert df == 3

    def test_all_columns_dropped(self):
        with pytest.raises(EstimationError):
            ols_fit(np.zeros((6, 2)), np.ones(6))

    def test_duplicate_column_dropped(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=15)
        z = rng.normal(size=15)
        X = np.column_stack([x, z, x])
        y = 2 * x + z
        beta, rss, df = ols_fit(X, y)
        assert df == 2
        assert rss == pytest.approx(0.0, abs=1e-16)
        assert (beta[0] == 0.0) != (beta[2] == 0.0)  # exactly one survives
        assert beta[0] + beta[2] == pytest.approx(2.0)

    def test_empty_design(self):
        y = np.array([1.0, 2.0, 2.0])
        beta, rss, df = ols_fit(np.empty((3, 0)), y)
        assert beta.size == 0 and df == 0
        assert rss == pytest.approx(float(y @ y))


class TestAic:
    def test_penalty_linearity(self):
        base = aic(50.0, 30, 3)
        assert aic(50.0, 30, 5) - base == pytest.approx(4.0)

    def test_two_model_comparison(self):
        gap = aic(100.0, 50, 3) - aic(90.0, 50, 4)
        assert gap == pytest.approx(50 * math.log(100 / 90) - 2)
        assert gap > 0  # the smaller-RSS model wins despite the extra term

    def test_perfect_fit_sentinel(self):
        assert aic(0.0, 10, 2) == float("-inf")

    def test_invalid_inputs(self):
        with pytest.raises(DataError):
            aic(-1.0, 10, 2)
        with pytest.raises(DataError):
            aic(1.0, 0, 2)


class TestSteplm:
    def test_forward_single_exact_predictor(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(40, 5))
        y = 2.0 * X[:, 1]
        d = Dataset(X=X, y=y)
        assert steplm(d, StepConfig(direction="forward")) == (1,)

    def test_backward_keeps_signals(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(80, 6))
        y = 2.0 * X[:, 0] + 1.5 * X[:, 3] + 0.3 * rng.normal(size=80)
        d = Dataset(X=X, y=y)
        selected = steplm(d, StepConfig(direction="backward"))
        assert {0, 3} <= set(selected)
        assert len(selected) <= 4

    def test_aic_strictly_decreases(self):
        d = gen_latent_regression(GenConfig(n=60, p=10, k=3, rho=0.5, seed=12))
        for direction in ("forward", "backward"):
            _, trace = _steplm_trace(d, StepConfig(direction=direction))
            assert all(b < a for a, b in zip(trace, trace[1:]))
            assert trace[-1] <= trace[0]

    def test_max_steps_caps_moves(self):
        rng = np.random.default_rng(13)
        X = rng.normal(size=(50, 6))
        y = 2 * X[:, 0] + 2 * X[:, 1] + 0.2 * rng.normal(size=50)
        d = Dataset(X=X, y=y)
        selected = steplm(d, StepConfig(direction="forward", max_steps=1))
        assert len(selected) == 1

    def test_reference_requires_fit(self):
        d = gen_latent_regression(GenConfig(n=30, p=4, k=1, rho=0.0, seed=14))
        with pytest.raises(ConfigError):
            steplm(d, StepConfig(use_reference=True))

    def test_reference_filter_prunes_noise_pickups(self):
        # same predictors and seeds, target swapped for clean predictive means
        picked_raw, picked_filtered = [], []
        for seed in range(3):
            d = gen_latent_regression(GenConfig(n=90, p=20, k=4, rho=0.6, seed=20 + seed))
            ref = fake_linear_reference(d.X, np.where(d.relevant, 0.35, 0.0))
            raw = steplm(d, StepConfig(direction="backward"))
            filt = steplm(d, StepConfig(direction="backward", use_reference=True), ref)
            picked_raw.append(sum(1 for j in raw if not d.relevant[j]))
            picked_filtered.append(sum(1 for j in filt if not d.relevant[j]))
        assert np.mean(picked_filtered) < np.mean(picked_raw)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            StepConfig(direction="sideways")
        with pytest.raises(ConfigError):
            StepConfig(criterion="bic")
        with pytest.raises(ConfigError):
            StepConfig(max_steps=0)


class TestBayesPvalue:
    def test_one_sided_floor(self):
        draws = np.abs(np.random.default_rng(30).normal(size=150)) + 0.1
        assert bayes_pvalue(draws) == pytest.approx(1 / 150)

    def test_symmetric_draws(self):
        z = np.random.default_rng(31).normal(size=200)
        draws = np.concatenate([np.abs(z), -np.abs(z)])
        assert bayes_pvalue(draws) == pytest.approx(0.5)

    def test_gaussian_tail_oracle(self):
        from scipy.stats import norm

        draws = np.random.default_rng(32).normal(1.0, 1.0, size=200_000)
        assert bayes_pvalue(draws) == pytest.approx(norm.cdf(-1.0), abs=0.004)

    def test_scale_invariance(self):
        draws = np.random.default_rng(33).normal(0.3, 1.0, size=500)
        assert bayes_pvalue(draws) == bayes_pvalue(2.5 * draws)

    def test_draw_floor(self):
        with pytest.raises(ConfigError):
            bayes_pvalue(np.ones(99))


class TestBayesStepwise:
    _mcmc = McmcConfig(warmup=150, draws=100, keep=100)

    def test_single_signal_retained(self):
        rng = np.random.default_rng(40)
        X = rng.normal(size=(60, 5))
        y = 5.0 * X[:, 0] + rng.normal(size=60)
        d = Dataset(X=X, y=y)
        selected = bayes_stepwise(d, BayesStepConfig(kfold=3, mcmc=self._mcmc, seed=41))
        assert 0 in selected
        assert len(selected) <= 2

    def test_pure_noise_reduces_to_small_set(self):
        counts = []
        for rep in range(4):
            rng = np.random.default_rng(50 + rep)
            X = rng.normal(size=(50, 10))
            y = rng.normal(size=50)
            d = Dataset(X=X, y=y)
            selected = bayes_stepwise(
                d, BayesStepConfig(kfold=3, mcmc=self._mcmc, seed=rep)
            )
            counts.append(len(selected))
        assert float(np.mean(counts)) < 3

    def test_reference_filter_sharpens(self):
        rng = np.random.default_rng(60)
        X = rng.normal(size=(60, 6))
        y = 3.0 * X[:, 2] + 1.5 * rng.normal(size=60)
        d = Dataset(X=X, y=y)
        ref = fake_linear_reference(d.X, np.array([0, 0, 3.0, 0, 0, 0]))
        selected = bayes_stepwise(
            d, BayesStepConfig(kfold=3, mcmc=self._mcmc, seed=61), ref=ref
        )
        assert 2 in selected
        assert len(selected) <= 2

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            BayesStepConfig(kfold=1)
        with pytest.raises(ConfigError):
            BayesStepConfig(max_steps=0)


class TestLasso:
    def test_grid_starts_at_empty_model(self):
        d = gen_latent_regression(GenConfig(n=50, p=8, k=3, rho=0.5, seed=70))
        fit = lasso_cv(d, K=4, seed=71)
        assert np.all(fit.coef_path[0] == 0.0)
        Xs = (d.X - d.X.mean(0)) / d.X.std(0)
        lam_max = float(np.abs(Xs.T @ (d.y - d.y.mean())).max()) / d.n
        assert fit.lambdas[0] == pytest.approx(lam_max, rel=1e-12)

    def test_soft_threshold_oracle_on_orthonormal_design(self):
        n, p = 64, 5
        X = orthonormal_design(n, p, seed=72)
        rng = np.random.default_rng(73)
        y = X @ np.array([1.2, 0.0, -0.7, 0.25, 0.0]) + 0.4 * rng.normal(size=n)
        d = Dataset(X=X, y=y)
        fit = lasso_cv(d, K=4, n_lambdas=40, seed=74)
        z = X.T @ (y - y.mean()) / n
        for i, lam in enumerate(fit.lambdas):
            oracle = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
            assert np.max(np.abs(fit.coef_path[i] - oracle)) < 1e-8

    def test_kkt_conditions_along_path(self):
        rng = np.random.default_rng(75)
        base = rng.normal(size=(40, 1))
        X = 0.6 * base + rng.normal(size=(40, 8))
        y = X[:, 0] - 0.5 * X[:, 4] + rng.normal(size=40)
        d = Dataset(X=X, y=y)
        fit = lasso_cv(d, K=4, n_lambdas=30, seed=76)
        Xs = (X - X.mean(0)) / X.std(0)
        yc = y - y.mean()
        for i, lam in enumerate(fit.lambdas):
            beta_std = fit.coef_path[i] * X.std(0)
            grad = Xs.T @ (yc - Xs @ beta_std) / d.n
            inactive = beta_std == 0
            assert np.all(np.abs(grad[inactive]) <= lam + 1e-6)
            active = ~inactive
            if active.any():
                assert np.max(np.abs(grad[active] - lam * np.sign(beta_std[active]))) <= 1e-6

    def test_active_set_grows_as_penalty_shrinks(self):
        d = gen_latent_regression(GenConfig(n=60, p=10, k=4, rho=0.4, seed=77))
        fit = lasso_cv(d, K=4, seed=78)
        sizes = (fit.coef_path != 0).sum(axis=1)
        assert np.all(np.diff(sizes) >= 0)

    def test_path_continuity_under_grid_refinement(self):
        d = gen_latent_regression(GenConfig(n=50, p=6, k=2, rho=0.5, seed=79))
        coarse = lasso_cv(d, K=4, n_lambdas=30, seed=80)
        fine = lasso_cv(d, K=4, n_lambdas=60, seed=80)
        jump = lambda f: np.max(np.abs(np.diff(f.coef_path, axis=0)))
        assert jump(fine) <= jump(coarse) + 1e-6

    def test_one_se_rule(self):
        d = gen_latent_regression(GenConfig(n=80, p=12, k=4, rho=0.5, seed=81))
        fit = lasso_cv(d, K=5, seed=82)
        best = int(np.argmin(fit.cv_mean))
        ci = fit.chosen_index
        assert ci <= best  # one-SE picks the sparser (larger-penalty) end
        assert fit.cv_mean[ci] <= fit.cv_mean[best] + fit.cv_se[best] + 1e-12
        inter, coef = fit.coefficients()
        assert set(fit.active) == set(np.flatnonzero(coef))

    def test_reference_filter_passthrough(self):
        rng = np.random.default_rng(83)
        X = rng.normal(size=(50, 6))
        y = 2.0 * X[:, 0] + 2.0 * rng.normal(size=50)
        d = Dataset(X=X, y=y)
        ref = fake_linear_reference(X, np.array([2.0, 0, 0, 0, 0, 0]))
        fit = lasso_cv(d, K=4, ref=ref, seed=84)
        assert fit.active == (0,)

    def test_fold_floor(self):
        d = gen_latent_regression(GenConfig(n=30, p=4, k=1, rho=0.0, seed=85))
        with pytest.raises(ConfigError):
            lasso_cv(d, K=1)


class TestSelectedSetsCsv:
    def test_round_trip(self, tmp_path):
        out = tmp_path / "sets.csv"
        write_selected_sets_csv(
            out,
            [("run0", "steplm", (0, 2)), ("run1", "lasso", (1,))],
            p=3,
            column_names=["a", "b", "c"],
        )
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["run_id", "method", "variable", "included"]
        assert len(rows) == 1 + 2 * 3
        assert rows[1] == ["run0", "steplm", "a", "1"]
        assert rows[2] == ["run0", "steplm", "b", "0"]
        assert rows[6] == ["run1", "lasso", "c", "0"]
