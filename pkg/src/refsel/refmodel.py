"""Reference models that filter noise out of the target.

Two constructions are provided. ``screen_and_spc`` + ``fit_spc_reference``
builds supervised principal components (columns screened by absolute
correlation with the target, then an SVD of the standardized screened block)
and regresses the target on the component scores under a hierarchical prior:
coefficients are exchangeable normal with a half-t scale, and the residual
scale gets its own half-t prior. ``fit_rhs_regression`` fits the full design
under a sparsity prior with heavy-tailed local scales, a half-Cauchy global
scale, and a finite Gaussian slab that bounds how far any coefficient can
escape shrinkage.

All half-t and half-Cauchy scales are represented by inverse-gamma mixtures,
so every Gibbs conditional is conjugate and no step-size tuning exists. The
slab enters as a zero-centered Gaussian factor on each coefficient with a
fixed width proportional to the response spread; only the heavy-tailed part
carries the residual scale. That keeps the local-scale updates conjugate and
gives each coefficient the bounded prior variance
1 / (1/(sigma^2 tau^2 lambda_j^2) + 1/c^2).

Fits are returned as immutable draw containers (``ReferenceFit``) exposing
per-draw predictive means, the posterior predictive mean ``yhat``, and the
basis needed to predict at new points.
"""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .errors import ConfigError, DataError, EstimationError, SamplerError
from .rng import stream

__all__ = [
    "McmcConfig",
    "PriorConfig",
    "SPCBasis",
    "StandardizedBasis",
    "ReferenceFit",
    "screen_and_spc",
    "fit_spc_reference",
    "fit_rhs_regression",
    "predictive_means",
    "predictive_mean_draws",
    "coefficients_original_scale",
    "export_draws_csv",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class McmcConfig:
    """Gibbs sampler schedule: warmup, stored draws, and thinning target."""

    warmup: int = 1000
    draws: int = 1000
    keep: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")
        if self.draws < 100:
            raise ConfigError(f"draws must be >= 100, got {self.draws}")
        if not 1 <= self.keep <= self.draws:
            raise ConfigError(f"keep must be in [1, draws], got {self.keep}")

    def thin_indices(self) -> np.ndarray:
        return np.linspace(0, self.draws - 1, self.keep).astype(int)


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of both reference priors.

    ``tau_scale=None`` applies the s_max^(-2) rule of the component model
    (override with any positive value). ``p0`` is the expected number of
    nonzero coefficients driving the global-scale heuristic of the sparse
    model; ``None`` applies min(p/10, n/5). The ``fixed_*`` pins freeze a
    scale at a known value, collapsing the model to a conjugate subcase;
    they exist for validation against analytic posteriors.
    """

    tau_df: float = 4.0
    tau_scale: float | None = None
    sigma_df: float = 3.0
    sigma_scale: float = 10.0
    slab_scale: float = 2.0
    p0: float | None = None
    fixed_tau: float | None = None
    fixed_sigma: float | None = None
    fixed_lambda: float | None = None

    def __post_init__(self):
        if self.tau_df < 1 or self.sigma_df < 1:
            raise ConfigError("prior degrees of freedom must be >= 1")
        for name in ("tau_scale", "sigma_scale", "slab_scale", "p0", "fixed_tau",
                     "fixed_sigma", "fixed_lambda"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ConfigError(f"{name} must be positive, got {v}")


@dataclass
class SPCBasis:
    """Supervised principal component basis.

    ``scores`` are exact linear functions of the screened, standardized
    columns; components are mutually orthogonal and ``s_max`` records the
    standard deviation of the leading component's scores.
    """

    screened_idx: np.ndarray
    loadings: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    scores: np.ndarray
    s_max: float

    def __post_init__(self):
        gram = self.scores.T @ self.scores
        scale = np.sqrt(np.outer(np.diag(gram), np.diag(gram)))
        off = np.abs(gram - np.diag(np.diag(gram)))
        if scale.max() > 0 and (off / np.maximum(scale, 1e-300)).max() > 1e-8:
            raise EstimationError("component scores are not orthogonal")

    @property
    def n_components(self) -> int:
        return self.loadings.shape[1]

    @property
    def n_inputs(self) -> int:
        return int(self.screened_idx.max()) + 1 if self.screened_idx.size else 0

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] <= self.screened_idx.max():
            raise DataError(
                f"design with {X.shape[1] if X.ndim == 2 else '?'} columns "
                f"cannot be projected through a basis screening up to column "
                f"{int(self.screened_idx.max())}"
            )
        Z = (X[:, self.screened_idx] - self.center) / self.scale
        return Z @ self.loadings


@dataclass
class StandardizedBasis:
    """Column-standardizing identity basis used by the full-design model."""

    center: np.ndarray
    scale: np.ndarray

    @property
    def n_components(self) -> int:
        return self.center.size

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.center.size:
            raise DataError(
                f"design has {X.shape[1] if X.ndim == 2 else '?'} columns, "
                f"basis expects {self.center.size}"
            )
        return (X - self.center) / self.scale


@dataclass
class ReferenceFit:
    """Posterior draws of a reference model.

    ``beta_draws`` live in the basis space (component scores or standardized
    columns); ``mean_draws[s]`` is the draw's predictive mean at the training
    points and ``yhat`` their average.
    """

    alpha_draws: np.ndarray
    beta_draws: np.ndarray
    sigma_draws: np.ndarray
    mean_draws: np.ndarray
    yhat: np.ndarray
    basis: SPCBasis | StandardizedBasis
    tau_draws: np.ndarray | None = None

    def __post_init__(self):
        if np.any(self.sigma_draws <= 0):
            raise SamplerError("sigma draws must be positive")
        if not np.allclose(self.yhat, self.mean_draws.mean(axis=0), atol=1e-10):
            raise SamplerError("yhat does not equal the mean of mean_draws")

    @property
    def n_draws(self) -> int:
        return self.sigma_draws.size


def _safe_corr(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Absolute column correlations with y; constant columns get score 0."""
    Xc = X - X.mean(axis=0)
    yc = y - y.mean()
    sy = math.sqrt(float(yc @ yc))
    if sy == 0.0:
        raise DataError("target is constant, correlations undefined")
    sx = np.sqrt((Xc**2).sum(axis=0))
    constant = sx == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (Xc.T @ yc) / (sx * sy)
    r[constant] = 0.0
    return np.abs(r), constant


def screen_and_spc(
    X, y, n_components: int = 5, threshold_ratio: float = 0.6
) -> SPCBasis:
    """Screen columns by |correlation with y| and extract leading components.

    Columns scoring at least ``threshold_ratio`` times the maximum score are
    retained; the components are the leading right-singular directions of
    the standardized retained block. ``threshold_ratio=0`` keeps every
    non-constant column (plain PCA); ``threshold_ratio=1`` keeps only the
    maximizer(s).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if n_components < 1:
        raise ConfigError(f"n_components must be >= 1, got {n_components}")
    if not 0.0 <= threshold_ratio <= 1.0:
        raise ConfigError(f"threshold_ratio must be in [0, 1], got {threshold_ratio}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("non-finite values in screening inputs")
    score, constant = _safe_corr(X, y)
    if constant.all():
        raise DataError("no screenable columns: every column is constant")
    if constant.any():
        log.warning("screening dropped %d constant column(s)", int(constant.sum()))
    max_score = score[~constant].max()
    retained = (~constant) & (score >= threshold_ratio * max_score)
    idx = np.flatnonzero(retained)
    block = X[:, idx]
    center = block.mean(axis=0)
    scale = block.std(axis=0, ddof=1)
    Z = (block - center) / scale
    U, s, Vt = np.linalg.svd(Z, full_matrices=False)
    rank = int((s > s[0] * 1e-12).sum()) if s.size else 0
    c = min(n_components, rank)
    if c == 0:
        raise DataError("screened block has rank 0")
    if c < n_components:
        log.warning("only %d informative component(s) available, requested %d", c, n_components)
    loadings = Vt[:c].T
    # fix the SVD sign ambiguity so repeated runs agree bit for bit
    flips = np.sign(loadings[np.abs(loadings).argmax(axis=0), np.arange(c)])
    flips[flips == 0] = 1.0
    loadings = loadings * flips
    scores = Z @ loadings
    s_max = float(scores[:, 0].std(ddof=1))
    return SPCBasis(
        screened_idx=idx,
        loadings=loadings,
        center=center,
        scale=scale,
        scores=scores,
        s_max=s_max,
    )


def _invgamma(rng: np.random.Generator, shape: float, rate) -> np.ndarray:
    # clipped to the representable range so a collapsing scale cannot
    # overflow its reciprocal; the bounds are far outside any data scale
    draw = 1.0 / rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float))
    return np.clip(draw, 1e-100, 1e100)


def _check_finite(t: int, *values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise SamplerError(f"non-finite sampler state at iteration {t}")


def fit_spc_reference(
    basis: SPCBasis,
    y,
    prior: PriorConfig | None = None,
    mcmc: McmcConfig | None = None,
    include_intercept: bool = True,
) -> ReferenceFit:
    """Gibbs-sample the component regression under the hierarchical prior.

    Coefficients are N(0, tau^2) given tau; tau has a half-t prior whose
    scale defaults to s_max^(-2) (see ``PriorConfig.tau_scale``); the
    residual scale has its own half-t prior. All updates are conjugate via
    inverse-gamma mixture augmentation.
    """
    prior = prior or PriorConfig()
    mcmc = mcmc or McmcConfig()
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise DataError("non-finite target")
    U = basis.scores
    if U.shape[0] != y.size:
        raise DataError(f"basis has {U.shape[0]} rows, target has {y.size}")
    n, c = U.shape
    tau_scale = prior.tau_scale if prior.tau_scale is not None else basis.s_max ** -2
    rng = stream(mcmc.seed, "spc-gibbs")

    UtU = U.T @ U
    Ut = U.T
    nu_t, nu_s = prior.tau_df, prior.sigma_df
    sigma2 = float(np.var(y)) or 1.0
    if prior.fixed_sigma is not None:
        sigma2 = prior.fixed_sigma**2
    tau2 = tau_scale**2
    if prior.fixed_tau is not None:
        tau2 = prior.fixed_tau**2
    a_tau = a_sig = 1.0
    alpha = float(y.mean()) if include_intercept else 0.0
    beta = np.zeros(c)

    total = mcmc.warmup + mcmc.draws
    out_alpha = np.empty(mcmc.draws)
    out_beta = np.empty((mcmc.draws, c))
    out_sigma = np.empty(mcmc.draws)
    out_tau = np.empty(mcmc.draws)
    eye = np.eye(c)
    for t in range(total):
        A = UtU / sigma2 + eye / tau2
        L = linalg.cholesky(A, lower=True)
        mu = linalg.cho_solve((L, True), Ut @ (y - alpha) / sigma2)
        beta = mu + linalg.solve_triangular(L, rng.standard_normal(c), trans="T", lower=True)
        if include_intercept:
            alpha = float(rng.normal((y - U @ beta).mean(), math.sqrt(sigma2 / n)))
        resid = y - alpha - U @ beta
        rss = float(resid @ resid)
        if prior.fixed_sigma is None:
            sigma2 = float(_invgamma(rng, (nu_s + n) / 2.0, nu_s / a_sig + rss / 2.0))
            a_sig = float(_invgamma(rng, (nu_s + 1) / 2.0, nu_s / sigma2 + prior.sigma_scale**-2))
        if prior.fixed_tau is None:
            tau2 = float(_invgamma(rng, (nu_t + c) / 2.0, nu_t / a_tau + float(beta @ beta) / 2.0))
            a_tau = float(_invgamma(rng, (nu_t + 1) / 2.0, nu_t / tau2 + tau_scale**-2))
        _check_finite(t, beta, alpha, sigma2, tau2)
        if t >= mcmc.warmup:
            s = t - mcmc.warmup
            out_alpha[s] = alpha
            out_beta[s] = beta
            out_sigma[s] = math.sqrt(sigma2)
            out_tau[s] = math.sqrt(tau2)

    idx = mcmc.thin_indices()
    mean_draws = out_alpha[idx, None] + out_beta[idx] @ Ut
    return ReferenceFit(
        alpha_draws=out_alpha[idx],
        beta_draws=out_beta[idx],
        sigma_draws=out_sigma[idx],
        mean_draws=mean_draws,
        yhat=mean_draws.mean(axis=0),
        basis=basis,
        tau_draws=out_tau[idx],
    )


def fit_rhs_regression(
    X,
    y,
    prior: PriorConfig | None = None,
    mcmc: McmcConfig | None = None,
    include_intercept: bool = True,
) -> ReferenceFit:
    """Gibbs-sample the sparse full-design regression.

    Columns are standardized internally; coefficients carry the residual
    scale in the heavy-tailed part of their prior variance, with a
    half-Cauchy global scale centered on the sparsity heuristic
    p0/((p - p0) sqrt(n)) and a finite slab of absolute width
    ``PriorConfig.slab_scale`` times the response standard deviation.
    When p exceeds n the coefficient draw uses the O(n^2 p) identity-lifting
    sampler instead of a p x p factorization.
    """
    prior = prior or PriorConfig()
    mcmc = mcmc or McmcConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError("design and target dimensions do not match")
    if X.shape[0] < 3:
        raise DataError(f"need at least 3 observations, got {X.shape[0]}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("non-finite values in regression inputs")
    n, p = X.shape
    center = X.mean(axis=0)
    scale = X.std(axis=0, ddof=1)
    degenerate = scale == 0.0
    if degenerate.any():
        log.warning("%d constant column(s) enter with unit scale", int(degenerate.sum()))
        scale = np.where(degenerate, 1.0, scale)
    Xs = (X - center) / scale
    basis = StandardizedBasis(center=center, scale=scale)

    p0 = prior.p0 if prior.p0 is not None else max(1.0, min(p / 10.0, n / 5.0))
    p0 = min(p0, p - 0.5) if p > 1 else min(p0, 0.5)
    tau0 = p0 / ((p - p0) * math.sqrt(n)) if p > p0 else 1.0
    # Slab width is absolute (scaled by the response spread), not tied to the
    # residual scale; only the heavy-tailed part carries sigma^2, so sigma's
    # conditional sees p/2 prior df rather than 2p/2 and cannot be dragged
    # down by the slab on weak-signal data.
    sy = float(np.std(y, ddof=1)) if n > 1 else 1.0
    c2 = (prior.slab_scale * (sy if sy > 0 else 1.0)) ** 2
    nu_s = prior.sigma_df
    rng = stream(mcmc.seed, "rhs-gibbs")

    sigma2 = float(np.var(y)) or 1.0
    if prior.fixed_sigma is not None:
        sigma2 = prior.fixed_sigma**2
    lam2 = np.ones(p)
    if prior.fixed_lambda is not None:
        lam2 = np.full(p, prior.fixed_lambda**2)
    nu_aux = np.ones(p)
    tau2 = tau0**2
    if prior.fixed_tau is not None:
        tau2 = prior.fixed_tau**2
    xi = a_sig = 1.0
    alpha = float(y.mean()) if include_intercept else 0.0
    beta = np.zeros(p)

    XtX = Xs.T @ Xs if p <= n else None
    Xt = Xs.T
    total = mcmc.warmup + mcmc.draws
    out_alpha = np.empty(mcmc.draws)
    out_beta = np.empty((mcmc.draws, p))
    out_sigma = np.empty(mcmc.draws)
    out_tau = np.empty(mcmc.draws)

    for t in range(total):
        # m is the prior variance of beta_j divided by sigma^2:
        # 1/v_j = 1/(sigma^2 tau^2 lam_j^2) + 1/c^2, so sigma^2/v_j below.
        m = 1.0 / (1.0 / (tau2 * lam2) + sigma2 / c2)
        yc = y - alpha
        sigma = math.sqrt(sigma2)
        if p <= n:
            A = XtX + np.diag(1.0 / m)
            L = linalg.cholesky(A, lower=True)
            mu = linalg.cho_solve((L, True), Xt @ yc)
            beta = mu + sigma * linalg.solve_triangular(
                L, rng.standard_normal(p), trans="T", lower=True
            )
        else:
            u = sigma * np.sqrt(m) * rng.standard_normal(p)
            v = Xs @ u / sigma + rng.standard_normal(n)
            G = (Xs * m) @ Xt + np.eye(n)
            w = linalg.cho_solve((linalg.cholesky(G, lower=True), True), yc / sigma - v)
            beta = u + sigma * m * (Xt @ w)
        if include_intercept:
            alpha = float(rng.normal((y - Xs @ beta).mean(), math.sqrt(sigma2 / n)))
        resid = y - alpha - Xs @ beta
        rss = float(resid @ resid)
        b2 = beta**2
        if prior.fixed_lambda is None:
            lam2 = _invgamma(rng, 1.0, 1.0 / nu_aux + b2 / (2.0 * sigma2 * tau2))
            nu_aux = _invgamma(rng, 1.0, 1.0 + 1.0 / lam2)
        if prior.fixed_tau is None:
            tau2 = float(
                _invgamma(rng, (p + 1) / 2.0, 1.0 / xi + float((b2 / lam2).sum()) / (2.0 * sigma2))
            )
            xi = float(_invgamma(rng, 1.0, tau0**-2 + 1.0 / tau2))
        if prior.fixed_sigma is None:
            rate = nu_s / a_sig + rss / 2.0 + float((b2 / lam2).sum()) / (2.0 * tau2)
            sigma2 = float(_invgamma(rng, (nu_s + n + p) / 2.0, rate))
            a_sig = float(_invgamma(rng, (nu_s + 1) / 2.0, nu_s / sigma2 + prior.sigma_scale**-2))
        _check_finite(t, beta, alpha, sigma2, tau2, lam2)
        if t >= mcmc.warmup:
            s = t - mcmc.warmup
            out_alpha[s] = alpha
            out_beta[s] = beta
            out_sigma[s] = math.sqrt(sigma2)
            out_tau[s] = math.sqrt(tau2)

    idx = mcmc.thin_indices()
    mean_draws = out_alpha[idx, None] + out_beta[idx] @ Xt
    return ReferenceFit(
        alpha_draws=out_alpha[idx],
        beta_draws=out_beta[idx],
        sigma_draws=out_sigma[idx],
        mean_draws=mean_draws,
        yhat=mean_draws.mean(axis=0),
        basis=basis,
        tau_draws=out_tau[idx],
    )


def predictive_mean_draws(fit: ReferenceFit, X_new) -> np.ndarray:
    """Per-draw predictive means at new points, shape (S, n_new)."""
    U = fit.basis.transform(np.asarray(X_new, dtype=float))
    return fit.alpha_draws[:, None] + fit.beta_draws @ U.T


def predictive_means(fit: ReferenceFit, X_new) -> np.ndarray:
    """Posterior predictive mean at new points (average over draws)."""
    return predictive_mean_draws(fit, X_new).mean(axis=0)


def mixture_lpd(y, mu_draws, sigma_draws) -> np.ndarray:
    """Pointwise log density of targets under an equal-weight normal mixture.

    ``mu_draws`` is (S, n), ``sigma_draws`` (S,); returns length-n log
    predictive densities log(1/S sum_s N(y_t; mu_st, sigma_s^2)).
    """
    sig = np.asarray(sigma_draws, dtype=float)[:, None]
    z = (np.asarray(y, dtype=float)[None, :] - np.asarray(mu_draws, dtype=float)) / sig
    logpdf = -0.5 * math.log(2.0 * math.pi) - np.log(sig) - 0.5 * z**2
    return special.logsumexp(logpdf, axis=0) - math.log(np.asarray(mu_draws).shape[0])


def coefficients_original_scale(fit: ReferenceFit) -> tuple[np.ndarray, np.ndarray]:
    """Back-transform standardized-draw coefficients to the input scale.

    Returns (intercept_draws, coefficient_draws). Only defined for fits on a
    standardizing identity basis.
    """
    if not isinstance(fit.basis, StandardizedBasis):
        raise ConfigError("original-scale coefficients exist only for full-design fits")
    beta = fit.beta_draws / fit.basis.scale
    alpha = fit.alpha_draws - beta @ fit.basis.center
    return alpha, beta


def export_draws_csv(fit: ReferenceFit, path) -> None:
    """Write draws as (draw, parameter, value) rows for audit."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["draw", "parameter", "value"])
        for s in range(fit.n_draws):
            w.writerow([s + 1, "alpha", repr(float(fit.alpha_draws[s]))])
            for j in range(fit.beta_draws.shape[1]):
                w.writerow([s + 1, f"beta{j + 1}", repr(float(fit.beta_draws[s, j]))])
            w.writerow([s + 1, "sigma", repr(float(fit.sigma_draws[s]))])
            if fit.tau_draws is not None:
                w.writerow([s + 1, "tau", repr(float(fit.tau_draws[s]))])
