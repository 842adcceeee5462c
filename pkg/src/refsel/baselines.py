"""Classical variable selectors, with optional reference-model filtering.

Three selector families: stepwise least-squares regression driven by AIC,
a Bayesian stepwise eliminator that drops the coefficient with the largest
posterior sign-ambiguity while cross-validated predictive density does not
degrade, and an L1-penalized regression solved by coordinate descent with
a cross-validated penalty.

Filtering means fitting a reference model first and replacing the target
vector with the reference's predictive means before the selector runs;
predictors, folds, and seeds stay identical so filtered and unfiltered
runs pair up replication by replication.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg

from .datagen import Dataset
from .errors import ConfigError, DataError, EstimationError
from .projpred import kfold_splits
from .refmodel import (
    McmcConfig,
    PriorConfig,
    ReferenceFit,
    fit_rhs_regression,
    mixture_lpd,
    predictive_mean_draws,
    predictive_means,
)
from .rng import stream

log = logging.getLogger(__name__)

__all__ = [
    "StepConfig",
    "BayesStepConfig",
    "LassoFit",
    "ols_fit",
    "aic",
    "steplm",
    "bayes_pvalue",
    "bayes_stepwise",
    "lasso_cv",
    "write_selected_sets_csv",
]


# ---------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class StepConfig:
    """Stepwise search settings."""

    direction: str = "backward"
    criterion: str = "aic"
    use_reference: bool = False
    max_steps: int = 1000

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ConfigError(f"direction must be forward or backward, got {self.direction!r}")
        if self.criterion != "aic":
            raise ConfigError(f"unsupported criterion {self.criterion!r}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be at least 1, got {self.max_steps}")


@dataclass(frozen=True)
class BayesStepConfig:
    """Bayesian stepwise elimination settings.

    A candidate drop is kept while the K-fold expected log predictive
    density does not decrease by more than ``guard_se`` standard errors of
    the paired pointwise difference; sampling noise between two refits
    would otherwise veto half of all neutral drops. Fold fits use a
    shortened chain.
    """

    kfold: int = 5
    max_steps: int = 1000
    seed: int = 0
    guard_se: float = 2.0
    mcmc: McmcConfig = field(
        default_factory=lambda: McmcConfig(warmup=200, draws=200, keep=100)
    )
    prior: PriorConfig | None = None

    def __post_init__(self):
        if self.kfold < 2:
            raise ConfigError(f"kfold must be at least 2, got {self.kfold}")
        if self.max_steps < 1:
            raise ConfigError(f"max_steps must be at least 1, got {self.max_steps}")
        if self.guard_se < 0:
            raise ConfigError(f"guard_se must be nonnegative, got {self.guard_se}")


@dataclass(frozen=True)
class LassoFit:
    """L1 path, cross-validation curve, and the chosen solution.

    ``coef_path`` rows are coefficients on the original input scale, one
    row per grid point (descending ``lambdas``); ``cv_mean``/``cv_se`` form
    the held-out squared-error curve. ``active`` holds the nonzero
    coefficient indices at ``chosen_lambda``.
    """

    lambdas: np.ndarray
    coef_path: np.ndarray
    intercept_path: np.ndarray
    cv_mean: np.ndarray
    cv_se: np.ndarray
    chosen_lambda: float
    active: tuple

    def __post_init__(self):
        L = self.lambdas.size
        if self.coef_path.shape[0] != L or self.intercept_path.size != L:
            raise DataError("path arrays disagree with the grid length")
        if self.cv_mean.size != L or self.cv_se.size != L:
            raise DataError("cross-validation curve does not match the grid")
        if np.any(np.diff(self.lambdas) > 0):
            raise DataError("penalty grid must be non-increasing")
        sizes = (self.coef_path != 0).sum(axis=1)
        if np.any(np.diff(sizes) < 0):
            # not strictly guaranteed for correlated designs; worth surfacing
            log.debug("active-set size not monotone along the path")

    @property
    def chosen_index(self) -> int:
        return int(np.argmin(np.abs(self.lambdas - self.chosen_lambda)))

    def coefficients(self) -> tuple[float, np.ndarray]:
        i = self.chosen_index
        return float(self.intercept_path[i]), self.coef_path[i].copy()


# ---------------------------------------------------------------------------
# least squares plumbing


def ols_fit(X_sub, y) -> tuple[np.ndarray, float, int]:
    """Least squares by pivoted QR; returns (beta, RSS, df).

    Linearly dependent columns get coefficient zero and are logged; ``df``
    is the rank actually fit. A design with no independent columns is an
    error.
    """
    X_sub = np.asarray(X_sub, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X_sub.ndim != 2 or X_sub.shape[0] != y.size:
        raise DataError("design and target dimensions do not match")
    n, k = X_sub.shape
    if k == 0:
        return np.empty(0), float(y @ y), 0
    Q, R, piv = linalg.qr(X_sub, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = (diag[0] if diag.size else 0.0) * max(n, k) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank == 0:
        raise EstimationError("degenerate fit: no independent columns")
    if rank < k:
        log.warning("dropped %d dependent column(s): %s", k - rank, piv[rank:].tolist())
    coef = linalg.solve_triangular(R[:rank, :rank], Q[:, :rank].T @ y, lower=False)
    beta = np.zeros(k)
    beta[piv[:rank]] = coef
    resid = y - X_sub @ beta
    return beta, float(resid @ resid), rank


def aic(RSS: float, n: int, n_params: int) -> float:
    """Gaussian profile AIC, n*log(RSS/n) + 2*n_params; constants dropped.

    A perfect fit (RSS = 0) returns -inf so it wins every comparison.
    """
    if n <= 0:
        raise DataError(f"need a positive observation count, got {n}")
    if RSS < 0:
        raise DataError(f"negative residual sum of squares: {RSS}")
    if RSS == 0:
        log.info("perfect fit: criterion saturates at -inf")
        return float("-inf")
    return n * math.log(RSS / n) + 2.0 * n_params


# ---------------------------------------------------------------------------
# stepwise AIC


def _rss_floor(y) -> float:
    """Smallest residual sum of squares distinguishable from a perfect fit.

    Exact-span targets (the reference-filtered case) leave RSS at rounding
    level, where log-ratio comparisons are noise; clamping to this floor
    lets the parameter penalty decide between perfect fits. One incremental
    update loses about eps*||y||^2 to cancellation, so the floor sits a
    couple of orders above that and far below any honest lack of fit.
    """
    return 1e-12 * float(y @ y)


def _forward_trace(X, y, max_steps):
    n, p = X.shape
    floor = _rss_floor(y)
    q0 = np.full(n, 1.0 / math.sqrt(n))
    Q = q0[:, None]
    r = y - q0 * (q0 @ y)
    rss = float(r @ r)
    col_norms = np.linalg.norm(X, axis=0)
    selected: list = []
    remaining = list(range(p))
    trace = [aic(max(rss, floor), n, 1)]
    while remaining and len(selected) < max_steps:
        Xc = X[:, remaining]
        Rc = Xc - Q @ (Q.T @ Xc)
        norms = np.linalg.norm(Rc, axis=0)
        ok = norms > 1e-10 * np.maximum(col_norms[remaining], 1e-300)
        gains = np.zeros(len(remaining))
        if ok.any():
            gains[ok] = ((Rc[:, ok] / norms[ok]).T @ r) ** 2
        cand_rss = np.maximum(rss - gains, floor)
        cand_aic = np.array(
            [aic(v, n, len(selected) + 2) for v in cand_rss]
        )
        pick = int(np.argmin(cand_aic))
        if not cand_aic[pick] < trace[-1]:
            break
        j = remaining[pick]
        selected.append(j)
        trace.append(float(cand_aic[pick]))
        if ok[pick]:
            u = Rc[:, pick] / norms[pick]
            u -= Q @ (Q.T @ u)
            u /= np.linalg.norm(u)
            Q = np.column_stack([Q, u])
            r = r - u * (u @ r)
            rss = float(r @ r)
        remaining.remove(j)
    return selected, trace


def _backward_trace(X, y, max_steps):
    n, p = X.shape
    floor = _rss_floor(y)
    selected = list(range(p))
    A = np.column_stack([np.ones(n), X])
    beta, rss, _ = ols_fit(A, y)
    trace = [aic(max(rss, floor), n, p + 1)]
    steps = 0
    while selected and steps < max_steps:
        cols = [0] + [j + 1 for j in selected]
        A_s = A[:, cols]
        Q, R, piv = linalg.qr(A_s, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = diag[0] * max(A_s.shape) * np.finfo(float).eps
        rank = int((diag > tol).sum())
        coef = linalg.solve_triangular(
            R[:rank, :rank], Q[:, :rank].T @ y, lower=False
        )
        beta_s = np.zeros(len(cols))
        beta_s[piv[:rank]] = coef
        resid = y - A_s @ beta_s
        rss = float(resid @ resid)
        # RSS increase from dropping one column: beta_j^2 / [(A'A)^-1]_jj,
        # computed on the independent block; dependent columns cost nothing
        increments = np.zeros(len(cols))
        Rinv = linalg.solve_triangular(
            R[:rank, :rank], np.eye(rank), lower=False
        )
        g_diag = (Rinv**2).sum(axis=1)
        increments[piv[:rank]] = coef**2 / g_diag
        cand_aic = np.array(
            [
                aic(max(rss + increments[i], floor), n, len(selected))
                for i in range(1, len(cols))  # never drop the intercept
            ]
        )
        pick = int(np.argmin(cand_aic))
        if not cand_aic[pick] < trace[-1]:
            break
        del selected[pick]
        trace.append(float(cand_aic[pick]))
        steps += 1
    return selected, trace


def _steplm_trace(d: Dataset, cfg: StepConfig, ref: ReferenceFit | None = None):
    if cfg.use_reference:
        if ref is None:
            raise ConfigError("use_reference requires a fitted reference model")
        y = predictive_means(ref, d.X)
    else:
        y = d.y
    if cfg.direction == "forward":
        selected, trace = _forward_trace(d.X, y, cfg.max_steps)
    else:
        selected, trace = _backward_trace(d.X, y, cfg.max_steps)
    return tuple(sorted(selected)), trace


def steplm(d: Dataset, cfg: StepConfig | None = None, ref: ReferenceFit | None = None) -> tuple:
    """Stepwise AIC selection; returns the selected variable indices.

    Forward search grows from the empty model, backward prunes from the
    full model; each accepted move strictly lowers the criterion. With
    ``cfg.use_reference`` the target is replaced by the reference model's
    predictive means before any fitting.
    """
    cfg = cfg or StepConfig()
    selected, _ = _steplm_trace(d, cfg, ref)
    return selected


# ---------------------------------------------------------------------------
# Bayesian stepwise


def bayes_pvalue(beta_draws_j) -> float:
    """Posterior sign-ambiguity: min of the two tail masses around zero.

    Values live in (0, 0.5]; a one-sided posterior reports the resolution
    floor 1/S rather than zero.
    """
    draws = np.asarray(beta_draws_j, dtype=float).ravel()
    S = draws.size
    if S < 100:
        raise ConfigError(f"need at least 100 draws, got {S}")
    p = min(float((draws <= 0).mean()), float((draws > 0).mean()))
    if p == 0.0:
        log.debug("tail mass below resolution; reporting floor 1/%d", S)
        return 1.0 / S
    return p


def _intercept_only_lpd(y_train, y_test, mcmc: McmcConfig, prior: PriorConfig | None):
    """Held-out log predictive density of the no-predictor Gaussian model."""
    prior = prior or PriorConfig()
    nu = prior.sigma_df
    n = y_train.size
    rng = stream(mcmc.seed, "intercept-only")
    sigma2 = float(np.var(y_train)) or 1.0
    a_sig = 1.0
    alpha = float(y_train.mean())
    keep_idx = set(mcmc.thin_indices().tolist())
    mus, sigmas = [], []
    for t in range(mcmc.warmup + mcmc.draws):
        alpha = float(rng.normal(y_train.mean(), math.sqrt(sigma2 / n)))
        rss = float(((y_train - alpha) ** 2).sum())
        shape = (nu + n) / 2.0
        rate = nu / a_sig + rss / 2.0
        sigma2 = 1.0 / float(rng.gamma(shape, 1.0 / rate))
        a_sig = 1.0 / float(
            rng.gamma((nu + 1) / 2.0, 1.0 / (nu / sigma2 + prior.sigma_scale**-2))
        )
        if t >= mcmc.warmup and (t - mcmc.warmup) in keep_idx:
            mus.append(alpha)
            sigmas.append(math.sqrt(sigma2))
    mu_draws = np.tile(np.array(mus)[:, None], (1, y_test.size))
    return mixture_lpd(y_test, mu_draws, np.array(sigmas))


def _kfold_elpd(X, y, subset, folds, cfg: BayesStepConfig) -> np.ndarray:
    """Pointwise held-out log predictive density, one entry per observation."""
    pointwise = np.zeros(y.size)
    for train, test in folds:
        if len(subset) == 0:
            lpd = _intercept_only_lpd(y[train], y[test], cfg.mcmc, cfg.prior)
        else:
            fit = fit_rhs_regression(
                X[np.ix_(train, subset)], y[train], prior=cfg.prior, mcmc=cfg.mcmc
            )
            mu = predictive_mean_draws(fit, X[np.ix_(test, subset)])
            lpd = mixture_lpd(y[test], mu, fit.sigma_draws)
        pointwise[test] = lpd
    return pointwise


def _drop_accepted(current, reduced, guard_se) -> bool:
    diff = reduced - current
    total = float(diff.sum())
    se = float(diff.std(ddof=1)) * math.sqrt(diff.size) if diff.size > 1 else 0.0
    return total >= -guard_se * se


def bayes_stepwise(
    d: Dataset, cfg: BayesStepConfig | None = None, ref: ReferenceFit | None = None
) -> tuple:
    """Backward elimination by posterior sign-ambiguity with a utility gate.

    Fits the sparse regression on the current set, finds the coefficient
    whose posterior is most ambiguous about its sign, and keeps the drop
    while the K-fold expected log predictive density does not decrease
    (within ``cfg.guard_se`` standard errors of the paired difference,
    since the two refits carry independent sampling noise). A provided
    reference model replaces the target with its predictive means (folds
    and seeds unchanged, so runs pair up).
    """
    cfg = cfg or BayesStepConfig()
    y = predictive_means(ref, d.X) if ref is not None else d.y
    X = d.X
    folds = kfold_splits(d.n, cfg.kfold, seed=cfg.seed)
    subset = list(range(d.p))
    current = _kfold_elpd(X, y, subset, folds, cfg)
    for _ in range(cfg.max_steps):
        if not subset:
            break
        fit = fit_rhs_regression(X[:, subset], y, prior=cfg.prior, mcmc=cfg.mcmc)
        pvals = [bayes_pvalue(fit.beta_draws[:, j]) for j in range(len(subset))]
        worst = int(np.argmax(pvals))
        candidate = subset[:worst] + subset[worst + 1 :]
        reduced = _kfold_elpd(X, y, candidate, folds, cfg)
        if _drop_accepted(current, reduced, cfg.guard_se):
            subset = candidate
            current = reduced
        else:
            break
    return tuple(subset)


# ---------------------------------------------------------------------------
# lasso

try:  # compiled inner loop; plain numpy below covers missing numba
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _cd_sweeps(X, r, beta, lam, tol, max_sweeps):  # pragma: no cover
    n, p = X.shape
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            bj = beta[j]
            z = 0.0
            for i in range(n):
                z += X[i, j] * r[i]
            z = z / n + bj
            if z > lam:
                nb = z - lam
            elif z < -lam:
                nb = z + lam
            else:
                nb = 0.0
            if nb != bj:
                diff = bj - nb
                for i in range(n):
                    r[i] += X[i, j] * diff
                beta[j] = nb
                if abs(diff) > max_delta:
                    max_delta = abs(diff)
        if max_delta < tol:
            return sweep + 1
    return -1


def _cd_sweeps_numpy(X, r, beta, lam, tol, max_sweeps):
    n, p = X.shape
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            bj = beta[j]
            z = float(X[:, j] @ r) / n + bj
            nb = math.copysign(max(abs(z) - lam, 0.0), z)
            if nb != bj:
                r += X[:, j] * (bj - nb)
                beta[j] = nb
                max_delta = max(max_delta, abs(bj - nb))
        if max_delta < tol:
            return sweep + 1
    return -1


def _solve_lasso_path(Xs, yc, lambdas, tol=1e-8, max_sweeps=5000, kkt_tol=1e-6):
    """Coordinate descent with warm starts down a descending grid.

    Returns the solved prefix of the path. The grid is cut short once the
    fit saturates: residual near zero, an interpolating active set (at
    least ``n`` nonzeros), or a grid step that no longer reduces the
    residual. Past that point smaller penalties only yield degenerate
    near-interpolators that cross-validation would never pick, and the
    zigzag between equivalent solutions stops making progress.
    """
    n, p = Xs.shape
    sweep_fn = _cd_sweeps if _HAVE_NUMBA else _cd_sweeps_numpy
    beta = np.zeros(p)
    r = yc.copy()
    path = np.zeros((lambdas.size, p))
    tss = float(yc @ yc)
    rss_prev = tss
    for i, lam in enumerate(lambdas):
        converged = False
        t = tol
        for _ in range(3):
            if sweep_fn(Xs, r, beta, lam, t, max_sweeps) < 0:
                break
            grad = Xs.T @ r / n
            ok_inactive = np.all(np.abs(grad[beta == 0]) <= lam + kkt_tol)
            ok_active = np.all(
                np.abs(grad[beta != 0] - lam * np.sign(beta[beta != 0])) <= kkt_tol
            )
            if ok_inactive and ok_active:
                converged = True
                break
            t *= 0.01  # tighten until the optimality conditions hold
        if not converged:
            raise EstimationError(f"coordinate descent stalled at grid index {i}")
        path[i] = beta
        rss = float(r @ r)
        active = int(np.count_nonzero(beta))
        saturated = rss <= 1e-3 * tss or active >= n
        # leading grid points can sit above this data's own entry penalty,
        # so flat steps only signal saturation once something is active
        if active > 0 and rss_prev - rss < 1e-5 * tss:
            saturated = True
        if saturated:
            return path[: i + 1]
        rss_prev = rss
    return path


def _standardize(X, y):
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    degenerate = scale == 0.0
    if degenerate.any():
        log.warning("%d constant column(s) enter with unit scale", int(degenerate.sum()))
        scale = np.where(degenerate, 1.0, scale)
    return (X - center) / scale, y - y.mean(), center, scale


def lasso_cv(
    d: Dataset,
    K: int = 10,
    ref: ReferenceFit | None = None,
    *,
    n_lambdas: int = 100,
    lambda_min_ratio: float = 1e-3,
    seed: int = 0,
) -> LassoFit:
    """Cross-validated L1 path; penalty chosen by the one-SE rule.

    Columns are standardized and the target centered internally; reported
    coefficients are back-transformed to the input scale. A provided
    reference model replaces the target with its predictive means first.
    The returned arrays may be shorter than ``n_lambdas``: the grid stops
    where the full-data fit saturates, which is routine for ``p >= n``.
    """
    if K < 2:
        raise ConfigError(f"need at least 2 folds, got {K}")
    y = predictive_means(ref, d.X) if ref is not None else d.y
    X = d.X
    n, p = X.shape
    Xs, yc, center, scale = _standardize(X, y)
    lam_max = float(np.abs(Xs.T @ yc).max()) / n
    if lam_max == 0.0:
        lam_max = 1.0  # constant target: any positive penalty gives all zeros
    lambdas = lam_max * np.logspace(0, math.log10(lambda_min_ratio), n_lambdas)

    path = _solve_lasso_path(Xs, yc, lambdas)
    lambdas = lambdas[: path.shape[0]]  # grid ends where the full fit saturates

    folds = kfold_splits(n, K, seed=seed)
    sq_err = np.full((len(folds), lambdas.size), np.inf)
    for f, (train, test) in enumerate(folds):
        Xt, yt, c_t, s_t = _standardize(X[train], y[train])
        fold_path = _solve_lasso_path(Xt, yt, lambdas)
        coef = fold_path / s_t
        inter = y[train].mean() - coef @ c_t
        pred = X[test] @ coef.T + inter
        sq_err[f, : fold_path.shape[0]] = ((y[test, None] - pred) ** 2).mean(axis=0)
    # score a penalty only where every fold solved it; folds saturate at
    # different depths and an inf column never survives the argmin below
    finite = np.isfinite(sq_err).all(axis=0)
    cv_mean = np.full(lambdas.size, np.inf)
    cv_se = np.zeros(lambdas.size)
    cv_mean[finite] = sq_err[:, finite].mean(axis=0)
    cv_se[finite] = sq_err[:, finite].std(axis=0, ddof=1) / math.sqrt(len(folds))

    best = int(np.argmin(cv_mean))
    threshold = cv_mean[best] + cv_se[best]
    chosen = 0
    while cv_mean[chosen] > threshold:
        chosen += 1  # first (largest) penalty within one SE of the best
    coef_path = path / scale
    intercept_path = y.mean() - coef_path @ center
    active = tuple(int(j) for j in np.flatnonzero(path[chosen]))
    return LassoFit(
        lambdas=lambdas,
        coef_path=coef_path,
        intercept_path=intercept_path,
        cv_mean=cv_mean,
        cv_se=cv_se,
        chosen_lambda=float(lambdas[chosen]),
        active=active,
    )


# ---------------------------------------------------------------------------
# serialization


def write_selected_sets_csv(path, records: Sequence, p: int, column_names=None):
    """Write (run_id, method, variable, included) rows.

    ``records`` is an iterable of (run_id, method, selected-indices); every
    variable 0..p-1 gets one row per record with a 0/1 inclusion flag.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "method", "variable", "included"])
        for run_id, method, selected in records:
            chosen = set(int(j) for j in selected)
            for j in range(p):
                name = column_names[j] if column_names is not None else str(j)
                w.writerow([run_id, method, name, 1 if j in chosen else 0])
