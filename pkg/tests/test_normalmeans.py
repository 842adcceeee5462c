import csv
import logging
import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from refsel.datagen import GenConfig, gen_latent_regression
from refsel.errors import ConfigError, DataError
from refsel.metrics import fdr, sensitivity
from refsel.normalmeans import (
    LocfdrModel,
    NormalMeansProblem,
    _natural_spline_basis,
    _poisson_spline_fit,
    ci90_select,
    ebayes_median_select,
    filter_problem,
    fisher_problem,
    fit_locfdr,
    fit_spike_laplace,
    laplace_posterior_median,
    locfdr_select,
    write_normal_means_csv,
)
from refsel.refmodel import McmcConfig, fit_spc_reference, screen_and_spc

from helpers import fake_linear_reference


def median_oracle(z, w, a):
    """Posterior median by numerical integration of the posterior CDF."""

    def component(theta):
        return stats.norm.pdf(z - theta) * (a / 2.0) * math.exp(-a * abs(theta))

    def mass(lo, hi):
        if lo >= hi:
            return 0.0
        pieces = sorted({lo, hi} | {p for p in (0.0, z) if lo < p < hi})
        total = 0.0
        for s, e in zip(pieces, pieces[1:]):
            val, _ = integrate.quad(component, s, e, epsabs=1e-13, epsrel=1e-13)
            total += val
        return total

    g = mass(-60.0, 60.0)
    m = (1.0 - w) * stats.norm.pdf(z) + w * g
    p_spike = (1.0 - w) * stats.norm.pdf(z) / m

    def cont_cdf(t):
        return w * mass(-60.0, t) / m

    if cont_cdf(0.0) > 0.5:
        return optimize.brentq(lambda t: cont_cdf(t) - 0.5, -60.0, 0.0, xtol=1e-12)
    if cont_cdf(0.0) + p_spike >= 0.5:
        return 0.0
    return optimize.brentq(lambda t: cont_cdf(t) + p_spike - 0.5, 0.0, 60.0, xtol=1e-12)


class TestProblem:
    def test_validation(self):
        with pytest.raises(DataError):
            NormalMeansProblem(z=np.array([1.0, np.inf]))
        with pytest.raises(DataError):
            NormalMeansProblem(z=np.zeros(3), sigma=0.0)
        with pytest.raises(DataError):
            NormalMeansProblem(z=np.zeros(3), source="filtered")
        with pytest.raises(DataError):
            NormalMeansProblem(z=np.zeros(3), r=np.zeros(4))


class TestFisherProblem:
    def test_exact_zero_correlation(self):
        x = np.tile([1.0, -1.0], 6)
        y = np.tile([1.0, 1.0, -1.0, -1.0], 3)
        prob = fisher_problem(x[:, None], y)
        assert prob.z[0] == 0.0
        assert prob.r[0] == 0.0

    def test_known_correlation_value(self):
        rng = np.random.default_rng(0)
        Q, _ = np.linalg.qr(np.column_stack([np.ones(28), rng.normal(size=(28, 2))]))
        u, v = Q[:, 1], Q[:, 2]
        y = 0.5 * u + math.sqrt(0.75) * v
        prob = fisher_problem(u[:, None], y)
        assert prob.r[0] == pytest.approx(0.5, abs=1e-12)
        assert prob.z[0] == pytest.approx(5.0 * math.atanh(0.5), abs=1e-9)
        assert prob.z[0] == pytest.approx(2.7465, abs=1e-3)

    def test_null_distribution_is_standard_normal(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(40, 10_000))
        y = rng.normal(size=40)
        prob = fisher_problem(X, y)
        assert stats.kstest(prob.z, "norm").pvalue > 0.01

    def test_transform_round_trip(self):
        d = gen_latent_regression(GenConfig(n=60, p=30, k=10, rho=0.5, seed=2))
        prob = fisher_problem(d.X, d.y)
        back = np.tanh(prob.z / math.sqrt(d.n - 3))
        assert np.max(np.abs(back - prob.r)) < 1e-12
        # transform preserves the ordering of the correlations
        assert np.array_equal(np.argsort(prob.z), np.argsort(prob.r))

    def test_small_n_rejected(self):
        with pytest.raises(DataError):
            fisher_problem(np.ones((3, 2)) + np.arange(6).reshape(3, 2), np.array([1.0, 2.0, 5.0]))

    def test_perfect_correlation_names_column(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(20, 4))
        y = 3.0 * X[:, 2] + 1.0
        X[:, 2] = y  # column 2 duplicates the target up to affinity
        with pytest.raises(DataError, match="column 2"):
            fisher_problem(X, y)

    def test_constant_column_rejected(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(15, 3))
        X[:, 1] = 7.0
        with pytest.raises(DataError, match="column 1"):
            fisher_problem(X, rng.normal(size=15))

    def test_estimated_sigma_matches_central_block_rule(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(50, 300))
        y = rng.normal(size=50)
        prob = fisher_problem(X, y, estimate_sigma=True)
        cut = np.quantile(np.abs(prob.z), 0.9)
        expected = float(np.std(prob.z[np.abs(prob.z) < cut], ddof=1))
        assert prob.sigma == pytest.approx(expected, rel=1e-12)
        assert 0.7 < prob.sigma < 1.3  # null data: close to the theoretical 1


class TestSplineBasis:
    def test_dimension_and_polynomial_span(self):
        knots = np.linspace(-2.0, 2.0, 8)
        x = np.linspace(-2.0, 2.0, 41)
        B = _natural_spline_basis(x, knots)
        assert B.shape == (41, 8)
        for target in (np.ones_like(x), 3.0 - 0.5 * x):
            coef, res, *_ = np.linalg.lstsq(B, target, rcond=None)
            assert np.max(np.abs(B @ coef - target)) < 1e-10

    def test_linear_extrapolation_beyond_boundaries(self):
        knots = np.linspace(-2.0, 2.0, 8)
        for xs in (np.array([2.5, 3.0, 3.5, 4.0]), np.array([-4.0, -3.5, -3.0, -2.5])):
            B = _natural_spline_basis(xs, knots)
            second = np.diff(B, n=2, axis=0)
            assert np.max(np.abs(second)) < 1e-9

    def test_poisson_fit_matches_direct_optimizer(self):
        rng = np.random.default_rng(6)
        z = np.concatenate([rng.normal(size=500), rng.normal(4.0, 1.0, size=100)])
        edges = np.linspace(z.min() - 0.1, z.max() + 0.1, 121)
        counts = np.histogram(z, bins=edges)[0].astype(float)
        mids = 0.5 * (edges[:-1] + edges[1:])
        coef, knots = _poisson_spline_fit(mids, counts, df=7)
        B = _natural_spline_basis(mids, knots)

        def negll(c):
            eta = B @ c
            return float((np.exp(eta) - counts * eta).sum())

        def grad(c):
            return B.T @ (np.exp(B @ c) - counts)

        res = optimize.minimize(negll, np.zeros(B.shape[1]), jac=grad, method="L-BFGS-B",
                                options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-12})
        assert res.success
        assert np.max(np.abs(B @ coef - B @ res.x)) < 1e-5


class TestLocfdr:
    def test_null_selection_rate(self):
        counts = []
        for rep in range(5):
            z = np.random.default_rng(10 + rep).normal(size=1000)
            counts.append(len(locfdr_select(NormalMeansProblem(z=z))))
        assert np.mean(counts) <= 10  # 1% of p

    def test_signal_block_recovered(self):
        rng = np.random.default_rng(20)
        z = np.concatenate([rng.normal(size=900), rng.normal(5.0, 1.0, size=100)])
        relevant = np.arange(1000) >= 900
        prob = NormalMeansProblem(z=z)
        model = fit_locfdr(prob)
        assert model.locfdr[int(np.argmax(np.abs(z)))] < 0.2
        assert model.locfdr[int(np.argmin(np.abs(z)))] > 0.8
        selected = locfdr_select(prob)
        assert sensitivity(selected, relevant) >= 0.7
        assert fdr(selected, relevant) <= 0.25

    def test_pi0_rises_as_nulls_are_added(self):
        rng = np.random.default_rng(30)
        z = np.concatenate([rng.normal(4.0, 1.0, size=200), rng.normal(size=300)])
        pi0s = []
        for _ in range(10):
            z = np.concatenate([z, rng.normal(size=200)])
            pi0s.append(fit_locfdr(NormalMeansProblem(z=z)).pi0)
        violations = int((np.diff(pi0s) < -1e-9).sum())
        assert violations <= 1

    def test_pi0_clipped_with_warning(self, caplog):
        z = np.random.default_rng(40).normal(0.0, 0.3, size=800)
        with caplog.at_level(logging.WARNING, logger="refsel.normalmeans"):
            model = fit_locfdr(NormalMeansProblem(z=z))
        assert model.pi0 == 1.0
        assert any("clipped" in rec.message for rec in caplog.records)

    def test_preconditions(self):
        z49 = np.random.default_rng(50).normal(size=49)
        with pytest.raises(DataError):
            fit_locfdr(NormalMeansProblem(z=z49))
        z = np.random.default_rng(51).normal(size=100)
        with pytest.raises(ConfigError):
            locfdr_select(NormalMeansProblem(z=z), threshold=0.0)
        with pytest.raises(ConfigError):
            fit_locfdr(NormalMeansProblem(z=z), df=2)

    def test_model_invariants_enforced(self):
        edges = np.linspace(-1, 1, 4)
        ok = dict(
            edges=edges,
            counts=np.array([1.0, 1.0, 1.0]),
            density=np.full(3, 0.5),
            density_z=np.full(3, 0.5),
            pi0=0.9,
            locfdr=np.full(3, 0.5),
        )
        LocfdrModel(**ok)
        with pytest.raises(DataError):
            LocfdrModel(**{**ok, "pi0": 1.5})
        with pytest.raises(DataError):
            LocfdrModel(**{**ok, "locfdr": np.array([0.5, 0.5, 1.2])})
        with pytest.raises(DataError):
            LocfdrModel(**{**ok, "density": np.array([0.5, 0.0, 0.5])})


class TestLaplaceMedian:
    def test_matches_quadrature_oracle(self):
        zs = np.linspace(-6.0, 6.0, 25)
        closed = laplace_posterior_median(zs, w=0.2, a=0.5)
        for z, got in zip(zs, closed):
            assert got == pytest.approx(median_oracle(float(z), 0.2, 0.5), abs=1e-6)

    def test_threshold_property(self):
        zs = np.linspace(0.0, 8.0, 2001)
        med = laplace_posterior_median(zs, w=0.2, a=0.5)
        nonzero = med != 0.0
        # a single crossing: zeros below the threshold, nonzeros above
        first = int(np.argmax(nonzero))
        assert nonzero[first:].all() and not nonzero[:first].any()
        t = zs[first - 1]
        assert t > 0.5  # genuine thresholding zone
        neg = laplace_posterior_median(-zs, w=0.2, a=0.5)
        assert np.array_equal(neg == 0.0, med == 0.0)

    def test_zero_input_and_pure_spike(self):
        for w, a in ((0.01, 0.2), (0.5, 1.0), (0.99, 5.0)):
            assert laplace_posterior_median(np.zeros(3), w, a)[0] == 0.0
        z = np.linspace(-4, 4, 9)
        assert np.all(laplace_posterior_median(z, 0.0, 0.5) == 0.0)
        assert np.all(laplace_posterior_median(z, 1e-8, 0.5) == 0.0)

    def test_odd_symmetry(self):
        z = np.linspace(0.1, 7.0, 40)
        pos = laplace_posterior_median(z, 0.3, 0.7)
        neg = laplace_posterior_median(-z, 0.3, 0.7)
        assert np.allclose(neg, -pos, atol=0, rtol=0)

    def test_parameter_validation(self):
        with pytest.raises(ConfigError):
            laplace_posterior_median(np.zeros(2), w=1.2, a=0.5)
        with pytest.raises(ConfigError):
            laplace_posterior_median(np.zeros(2), w=0.5, a=0.0)


class TestSpikeLaplaceFit:
    def test_recovers_generating_parameters(self):
        rng = np.random.default_rng(60)
        p, w_true, a_true = 4000, 0.15, 0.6
        signal = rng.random(p) < w_true
        theta = np.where(signal, rng.laplace(0.0, 1.0 / a_true, size=p), 0.0)
        z = theta + rng.normal(size=p)
        w, a = fit_spike_laplace(z)
        assert 0.08 < w < 0.25
        assert 0.35 < a < 1.0

    def test_underdispersed_data_flags_boundary(self, caplog):
        # any Laplace mass strictly worsens the fit here, so the weight
        # is pushed against its lower search limit and must be reported
        z = 0.5 * np.random.default_rng(61).normal(size=400)
        with caplog.at_level(logging.WARNING, logger="refsel.normalmeans"):
            fit_spike_laplace(z)
        assert any("boundary" in rec.message for rec in caplog.records)

    def test_select_recovers_signal_block(self):
        rng = np.random.default_rng(62)
        z = np.concatenate([rng.normal(size=900), rng.normal(5.0, 1.0, size=100)])
        relevant = np.arange(1000) >= 900
        selected = ebayes_median_select(NormalMeansProblem(z=z))
        assert sensitivity(selected, relevant) >= 0.7
        assert fdr(selected, relevant) <= 0.2

    def test_minimum_size(self):
        with pytest.raises(DataError):
            ebayes_median_select(NormalMeansProblem(z=np.zeros(9)))


class TestCi90:
    _mcmc = McmcConfig(warmup=300, draws=200, keep=200)

    def test_all_zero_input_selects_nothing(self):
        prob = NormalMeansProblem(z=np.zeros(50))
        assert ci90_select(prob, self._mcmc) == ()

    def test_single_strong_signal(self):
        z = np.zeros(100)
        z[7] = 10.0
        for seed in (0, 1, 2):
            mcmc = McmcConfig(warmup=300, draws=200, keep=200, seed=seed)
            assert ci90_select(NormalMeansProblem(z=z), mcmc) == (7,)

    def test_null_selection_rate(self):
        z = np.random.default_rng(70).normal(size=1000)
        selected = ci90_select(NormalMeansProblem(z=z), self._mcmc)
        assert len(selected) < 50  # under 5% of p

    def test_deterministic_under_seed(self):
        z = np.random.default_rng(71).normal(size=200)
        z[:5] += 6.0
        a = ci90_select(NormalMeansProblem(z=z), self._mcmc)
        b = ci90_select(NormalMeansProblem(z=z), self._mcmc)
        assert a == b
        assert set(range(5)) <= set(a)


class TestFilterProblem:
    def test_identity_reference_keeps_problem(self):
        rng = np.random.default_rng(80)
        X = rng.normal(size=(60, 40))
        beta = rng.normal(size=40)
        y = X @ beta
        raw = fisher_problem(X, y)
        tagged = NormalMeansProblem(
            z=raw.z, r=raw.r, theta_truth=np.arange(40.0), source="raw"
        )
        filtered = filter_problem(tagged, fake_linear_reference(X, beta), X)
        assert filtered.source == "reference-filtered"
        assert np.allclose(filtered.z, raw.z, atol=1e-8)
        assert np.array_equal(filtered.theta_truth, tagged.theta_truth)

    def test_reference_sharpens_relevant_statistics(self):
        d = gen_latent_regression(GenConfig(n=70, p=200, k=20, rho=0.5, seed=81))
        raw = fisher_problem(d.X, d.y)
        basis = screen_and_spc(d.X, d.y, n_components=5)
        ref = fit_spc_reference(basis, d.y, mcmc=McmcConfig(warmup=300, draws=150, keep=100))
        filtered = filter_problem(raw, ref, d.X)
        rel = d.relevant
        assert np.mean(np.abs(filtered.z[rel])) > np.mean(np.abs(raw.z[rel]))
        null_z = filtered.z[~rel]
        assert abs(null_z.mean()) < 3.0 * null_z.std(ddof=1) / math.sqrt(null_z.size)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(82)
        X = rng.normal(size=(30, 8))
        raw = fisher_problem(X, rng.normal(size=30))
        ref = fake_linear_reference(X, np.zeros(8))
        with pytest.raises(DataError):
            filter_problem(raw, ref, X[:, :7])


class TestCsv:
    def test_round_trip(self, tmp_path):
        prob = NormalMeansProblem(z=np.array([0.5, -2.0, 3.0]), r=np.array([0.1, -0.4, 0.6]))
        out = tmp_path / "nm.csv"
        write_normal_means_csv(
            out, prob, {"locfdr": (2,), "ebayes": (1, 2)}, column_names=["a", "b", "c"]
        )
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["variable", "r", "z", "locfdr", "ebayes"]
        assert rows[1] == ["a", "0.1", "0.5", "0", "0"]
        assert rows[2][3:] == ["0", "1"]
        assert rows[3][3:] == ["1", "1"]

    def test_missing_r_left_blank(self, tmp_path):
        prob = NormalMeansProblem(z=np.array([1.0, 2.0]))
        out = tmp_path / "nm2.csv"
        write_normal_means_csv(out, prob, {"m": ()})
        rows = list(csv.reader(out.open()))
        assert rows[1][1] == ""
