"""Minimal-subset selection by projecting a reference model onto submodels.

The reference model's posterior predictive (per-draw means and residual
scales) is projected draw by draw onto Gaussian linear submodels: the
projected coefficients are the least-squares fit of the draw's mean vector
on the submodel design, and the projected residual variance absorbs the
unexplained part, sigma_perp^2 = sigma^2 + RSS/n. The per-draw discrepancy
n * log(sigma_perp / sigma) is exactly the Gaussian KL divergence between
the two predictive distributions summed over observations.

On top of the projection sit: a greedy forward search that ranks variables
by how much they reduce the mean per-draw discrepancy, a cross-validated
estimate of each prefix's predictive utility (with per-fold reference
refits), a decision rule that picks the smallest prefix whose utility is
probably close to a baseline, and a composed one-call selector.
"""

import csv
import logging
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import linalg
from scipy.special import logsumexp, ndtr

from .datagen import Dataset
from .errors import ConfigError, DataError
from .refmodel import (
    McmcConfig,
    PriorConfig,
    ReferenceFit,
    fit_rhs_regression,
    fit_spc_reference,
    mixture_lpd,
    predictive_mean_draws,
    screen_and_spc,
)
from .rng import stream

log = logging.getLogger(__name__)

__all__ = [
    "SubmodelProjection",
    "UtilityPath",
    "SizeDecision",
    "SelectionResult",
    "ProjpredConfig",
    "project_draw",
    "project_draws",
    "forward_search",
    "kfold_splits",
    "estimate_utility_kfold",
    "estimate_utility_loo",
    "select_size",
    "projpred_select",
    "write_selection_csv",
    "rhs_reference_builder",
    "spc_reference_builder",
]

_LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class SubmodelProjection:
    """Projection of every posterior draw onto one variable subset.

    ``beta_draws`` has one row per draw and ``len(idx) + 1`` columns, the
    first being the intercept. Columns of the submodel design that were
    dropped for linear dependence keep coefficient 0 and are listed in
    ``dropped`` (original variable indices).
    """

    idx: tuple
    beta_draws: np.ndarray
    sigma_draws: np.ndarray
    kl_draws: np.ndarray
    dropped: tuple = ()

    def __post_init__(self):
        S, w = self.beta_draws.shape
        if w != len(self.idx) + 1:
            raise DataError("coefficient width does not match index count")
        if self.sigma_draws.shape != (S,) or self.kl_draws.shape != (S,):
            raise DataError("per-draw arrays disagree on draw count")
        if np.any(self.sigma_draws <= 0):
            raise DataError("projected residual scales must be positive")
        if np.any(self.kl_draws < 0):
            raise DataError("projection discrepancies must be nonnegative")

    @property
    def n_draws(self) -> int:
        return self.sigma_draws.size

    def predict(self, X_new) -> np.ndarray:
        """Per-draw submodel means at new points, shape (S, n_new)."""
        X_new = np.asarray(X_new, dtype=float)
        A = np.column_stack([np.ones(X_new.shape[0]), X_new[:, list(self.idx)]])
        return self.beta_draws @ A.T


@dataclass(frozen=True)
class UtilityPath:
    """Cross-validated predictive utility along a nested prefix path.

    ``pointwise[i, t]`` is observation t's contribution to the size
    ``sizes[i]`` prefix's expected log predictive density, so totals are
    sums over the second axis by construction. ``baseline_pointwise`` holds
    the comparison model's contributions (the reference model, or the best
    explored prefix after ``rebase_to_best``).
    """

    sizes: tuple
    added: tuple
    pointwise: np.ndarray
    baseline_pointwise: np.ndarray
    baseline: str

    def __post_init__(self):
        if len(self.sizes) != len(self.added) or len(self.sizes) == 0:
            raise DataError("sizes and added-variable records disagree")
        if self.pointwise.shape != (len(self.sizes), self.baseline_pointwise.size):
            raise DataError("pointwise matrix shape does not match sizes and n")
        if self.baseline not in ("reference", "best-submodel"):
            raise ConfigError(f"unknown baseline tag {self.baseline!r}")

    @property
    def n_points(self) -> int:
        return self.baseline_pointwise.size

    @property
    def elpd(self) -> np.ndarray:
        return self.pointwise.sum(axis=1)

    @property
    def baseline_elpd(self) -> float:
        return float(self.baseline_pointwise.sum())

    @property
    def diff_to_baseline(self) -> np.ndarray:
        return self.elpd - self.baseline_elpd

    @property
    def se_diff(self) -> np.ndarray:
        # SE of the summed difference: sd of pointwise diffs times sqrt(n)
        n = self.n_points
        if n < 2:
            return np.zeros(len(self.sizes))
        d = self.pointwise - self.baseline_pointwise
        return d.std(axis=1, ddof=1) * math.sqrt(n)

    def rebase_to_best(self) -> "UtilityPath":
        """Return the same path measured against its best explored prefix."""
        best = int(np.argmax(self.elpd))
        return UtilityPath(
            sizes=self.sizes,
            added=self.added,
            pointwise=self.pointwise,
            baseline_pointwise=self.pointwise[best].copy(),
            baseline="best-submodel",
        )


class SizeDecision(NamedTuple):
    size: int
    saturated: bool


@dataclass(frozen=True)
class SelectionResult:
    """Outcome of one complete selection pass."""

    ranking: tuple
    chosen_size: int
    chosen_idx: tuple
    utility: UtilityPath
    alpha: float
    saturated: bool = False

    def __post_init__(self):
        if self.chosen_size > len(self.ranking):
            raise DataError("chosen size exceeds explored ranking")
        if self.chosen_idx != tuple(self.ranking[: self.chosen_size]):
            raise DataError("chosen subset must be a prefix of the ranking")


@dataclass(frozen=True)
class ProjpredConfig:
    """Knobs for the composed selector."""

    alpha: float = 0.16
    kfold: int = 10
    max_size: int | None = None
    n_search_draws: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.kfold < 2:
            raise ConfigError(f"kfold must be at least 2, got {self.kfold}")
        if self.max_size is not None and self.max_size < 0:
            raise ConfigError(f"max_size must be nonnegative, got {self.max_size}")
        if self.n_search_draws < 1:
            raise ConfigError(f"n_search_draws must be positive, got {self.n_search_draws}")


# ---------------------------------------------------------------------------
# draw-wise projection


def _independent_columns(A: np.ndarray) -> list:
    """Indices of a maximal independent column set, preferring earlier ones."""
    kept: list = []
    basis: list = []
    for j in range(A.shape[1]):
        v = A[:, j].astype(float, copy=True)
        nrm0 = float(np.linalg.norm(v))
        if nrm0 == 0.0:
            continue
        for _ in range(2):  # re-orthogonalize once for stability
            for q in basis:
                v -= (q @ v) * q
        nrm = float(np.linalg.norm(v))
        if nrm > 1e-10 * nrm0:
            kept.append(j)
            basis.append(v / nrm)
    return kept


def project_draws(mean_draws, sigma_draws, X_sub, idx=None) -> SubmodelProjection:
    """Project every draw onto the subset whose design columns are X_sub.

    ``mean_draws`` is (S, n), ``sigma_draws`` (S,), ``X_sub`` (n, k). ``idx``
    names the original variable indices of X_sub's columns (defaults to
    0..k-1). Linearly dependent columns are dropped, flagged in the result,
    and logged.
    """
    F = np.asarray(mean_draws, dtype=float)
    sig = np.asarray(sigma_draws, dtype=float).ravel()
    X_sub = np.asarray(X_sub, dtype=float)
    if X_sub.ndim != 2:
        raise DataError("submodel design must be 2-D")
    n, k = X_sub.shape
    if F.ndim != 2 or F.shape[1] != n:
        raise DataError("mean draws do not match the design's row count")
    if sig.size != F.shape[0]:
        raise DataError("sigma draws do not match the mean draw count")
    if np.any(sig <= 0):
        raise DataError("reference residual scales must be positive")
    idx = tuple(range(k)) if idx is None else tuple(int(j) for j in idx)
    if len(idx) != k:
        raise DataError("idx length does not match design width")

    A = np.column_stack([np.ones(n), X_sub])
    keep = list(range(k + 1))
    dropped: tuple = ()
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(A.shape) * np.finfo(float).eps
    if np.any(diag <= tol):
        keep = _independent_columns(A)
        dropped = tuple(idx[j - 1] for j in range(k + 1) if j not in keep)
        log.warning("dropped %d dependent column(s): %s", len(dropped), dropped)
        Q, R = np.linalg.qr(A[:, keep])

    QtF = Q.T @ F.T  # (r, S)
    coef = linalg.solve_triangular(R, QtF, lower=False)
    resid = F.T - Q @ QtF
    rss = np.einsum("ns,ns->s", resid, resid)
    sigma_perp = np.sqrt(sig**2 + rss / n)
    kl = np.maximum(n * np.log(sigma_perp / sig), 0.0)

    beta = np.zeros((F.shape[0], k + 1))
    beta[:, keep] = coef.T
    return SubmodelProjection(
        idx=idx, beta_draws=beta, sigma_draws=sigma_perp, kl_draws=kl, dropped=dropped
    )


def project_draw(f_s, sigma_s: float, X_sub):
    """Project a single predictive mean draw; returns (beta, sigma_perp, kl)."""
    f_s = np.asarray(f_s, dtype=float).ravel()
    proj = project_draws(f_s[None, :], np.array([float(sigma_s)]), X_sub)
    return proj.beta_draws[0], float(proj.sigma_draws[0]), float(proj.kl_draws[0])


# ---------------------------------------------------------------------------
# forward search


def _thin_rows(total: int, want: int) -> np.ndarray:
    if want >= total:
        return np.arange(total)
    return np.unique(np.round(np.linspace(0, total - 1, want)).astype(int))


def forward_search(
    ref: ReferenceFit,
    X,
    max_size: int | None = None,
    candidates: Sequence[int] | None = None,
    n_search_draws: int = 20,
) -> list:
    """Greedily rank variables by mean per-draw projection discrepancy.

    Each step adds the candidate whose inclusion minimizes the mean over
    draws of n*log(sigma_perp/sigma); ties break toward the lowest column
    index. The search runs on a deterministic thinning of ``n_search_draws``
    posterior draws and maintains an orthonormal basis of the growing
    design, so each step costs one pass over the remaining candidates.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != ref.mean_draws.shape[1]:
        raise DataError("design does not match the reference fit's row count")
    n, p = X.shape
    if candidates is None:
        cand = list(range(p))
    else:
        cand = sorted({int(j) for j in candidates})
        if cand and (cand[0] < 0 or cand[-1] >= p):
            raise ConfigError("candidate indices out of range")
    if max_size is None:
        max_size = min(len(cand), max(n - 2, 0), 30)
    if max_size < 0 or max_size > len(cand):
        raise ConfigError(
            f"max_size must lie in [0, {len(cand)}], got {max_size}"
        )
    if n_search_draws < 1:
        raise ConfigError(f"n_search_draws must be positive, got {n_search_draws}")

    rows = _thin_rows(ref.n_draws, n_search_draws)
    F = ref.mean_draws[rows].T.copy()  # (n, S')
    sig2 = ref.sigma_draws[rows] ** 2
    col_norms = np.linalg.norm(X, axis=0)

    # orthonormal basis of [1, X_selected]; F_res and RSS track residuals
    q0 = np.full(n, 1.0 / math.sqrt(n))
    Q = q0[:, None]
    F_res = F - q0[:, None] * (q0 @ F)
    rss = np.einsum("ns,ns->s", F_res, F_res)

    ranking: list = []
    remaining = cand
    for _ in range(max_size):
        Xc = X[:, remaining]
        R = Xc - Q @ (Q.T @ Xc)
        norms = np.linalg.norm(R, axis=0)
        ok = norms > 1e-10 * np.maximum(col_norms[remaining], 1e-300)
        scores = np.empty(len(remaining))
        base_score = float(np.mean(np.log1p(rss / (n * sig2))))
        if ok.any():
            U = R[:, ok] / norms[ok]
            g = (U.T @ F_res) ** 2
            new_rss = np.maximum(rss[None, :] - g, 0.0)
            scores[ok] = np.mean(np.log1p(new_rss / (n * sig2)), axis=1)
        scores[~ok] = base_score
        pick = int(np.argmin(scores))  # first minimum: lowest column index
        j = remaining[pick]
        ranking.append(j)
        if ok[pick]:
            u = R[:, pick] / norms[pick]
            u -= Q @ (Q.T @ u)  # guard orthogonality drift over many steps
            u /= np.linalg.norm(u)
            Q = np.column_stack([Q, u])
            proj = u @ F_res
            F_res = F_res - u[:, None] * proj
            rss = np.maximum(rss - proj**2, 0.0)
        remaining = [r for r in remaining if r != j]
    return ranking


# ---------------------------------------------------------------------------
# predictive utility


def kfold_splits(n: int, K: int, seed: int = 0) -> list:
    """Deterministic K-fold partition; returns (train, test) index pairs."""
    if K < 2:
        raise ConfigError(f"need at least 2 folds, got {K}")
    if K > n:
        raise ConfigError(f"cannot split {n} rows into {K} folds")
    order = stream(seed, "kfold").permutation(n)
    folds = []
    for chunk in np.array_split(order, K):
        test = np.sort(chunk)
        train = np.setdiff1d(np.arange(n), test)
        folds.append((train, test))
    return folds


def _validate_folds(folds, n: int):
    seen = np.zeros(n, dtype=int)
    for f, (train, test) in enumerate(folds):
        train = np.asarray(train, dtype=int)
        test = np.asarray(test, dtype=int)
        if train.size < 2:
            raise ConfigError(f"fold {f} leaves {train.size} training row(s); need >= 2")
        if test.size < 1:
            raise ConfigError(f"fold {f} has an empty held-out set")
        if np.intersect1d(train, test).size:
            raise ConfigError(f"fold {f} overlaps its own training rows")
        seen[test] += 1
    if not np.all(seen == 1):
        raise ConfigError("held-out sets must cover every row exactly once")


def estimate_utility_kfold(
    X,
    y,
    ranking: Sequence[int],
    K: int = 10,
    ref_builder: Callable | None = None,
    *,
    folds: Sequence | None = None,
    fold_refs: Sequence | None = None,
    seed: int = 0,
) -> UtilityPath:
    """Cross-validated predictive utility of every prefix of ``ranking``.

    Each fold refits the reference on its training rows (``ref_builder``;
    prebuilt ``fold_refs`` take precedence and make repeated calls cheap),
    projects every prefix onto the training design, and scores held-out
    rows under the projected draw mixture. The baseline row is the
    reference model itself scored the same way. Explicit ``folds`` override
    the deterministic ``K``-fold split (then ``K`` is ignored).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError("design and target dimensions do not match")
    n = y.size
    ranking = [int(j) for j in ranking]
    if folds is None:
        folds = kfold_splits(n, K, seed)
    _validate_folds(folds, n)
    if fold_refs is not None and len(fold_refs) != len(folds):
        raise ConfigError(
            f"got {len(fold_refs)} prebuilt references for {len(folds)} folds"
        )
    if fold_refs is None and ref_builder is None:
        raise ConfigError("need either ref_builder or prebuilt fold_refs")

    L = len(ranking)
    pointwise = np.empty((L + 1, n))
    base_pw = np.empty(n)
    for f, (train, test) in enumerate(folds):
        train = np.asarray(train, dtype=int)
        test = np.asarray(test, dtype=int)
        ref_k = fold_refs[f] if fold_refs is not None else ref_builder(X[train], y[train])
        base_pw[test] = mixture_lpd(
            y[test], predictive_mean_draws(ref_k, X[test]), ref_k.sigma_draws
        )
        for i in range(L + 1):
            sub = ranking[:i]
            proj = project_draws(
                ref_k.mean_draws, ref_k.sigma_draws, X[train][:, sub], idx=sub
            )
            pointwise[i, test] = mixture_lpd(
                y[test], proj.predict(X[test]), proj.sigma_draws
            )
    return UtilityPath(
        sizes=tuple(range(L + 1)),
        added=(-1,) + tuple(ranking),
        pointwise=pointwise,
        baseline_pointwise=base_pw,
        baseline="reference",
    )


def estimate_utility_loo(X, y, ranking: Sequence[int], ref: ReferenceFit) -> UtilityPath:
    """Leave-one-out utility via truncated importance sampling.

    Cheaper than the K-fold estimate: reuses the single full-data reference
    fit. Raw per-draw ratios 1/p(y_t | draw) are capped at sqrt(S) times
    their mean before reweighting, which bounds the variance contributed by
    any one draw at some bias cost.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError("design and target dimensions do not match")
    ranking = [int(j) for j in ranking]
    L, S = len(ranking), ref.n_draws

    def loo_pointwise(mu_draws, sigma_draws):
        sig = sigma_draws[:, None]
        z = (y[None, :] - mu_draws) / sig
        logpdf = -0.5 * _LOG_2PI - np.log(sig) - 0.5 * z**2
        logr = -logpdf
        cap = 0.5 * math.log(S) + logsumexp(logr, axis=0) - math.log(S)
        logw = np.minimum(logr, cap[None, :])
        return logsumexp(logw + logpdf, axis=0) - logsumexp(logw, axis=0)

    base_pw = loo_pointwise(predictive_mean_draws(ref, X), ref.sigma_draws)
    pointwise = np.empty((L + 1, y.size))
    for i in range(L + 1):
        sub = ranking[:i]
        proj = project_draws(ref.mean_draws, ref.sigma_draws, X[:, sub], idx=sub)
        pointwise[i] = loo_pointwise(proj.predict(X), proj.sigma_draws)
    return UtilityPath(
        sizes=tuple(range(L + 1)),
        added=(-1,) + tuple(ranking),
        pointwise=pointwise,
        baseline_pointwise=base_pw,
        baseline="reference",
    )


# ---------------------------------------------------------------------------
# size decision


def select_size(path: UtilityPath, alpha: float = 0.16) -> SizeDecision:
    """Smallest prefix whose utility plausibly reaches the baseline.

    Picks the smallest size with P(elpd_size - elpd_baseline > 0) >= alpha
    under a normal approximation. A zero SE collapses that probability to
    1, 1/2, or 0 for positive, zero, or negative observed differences, and
    a difference within float resolution of the utilities counts as zero:
    exactly collinear prefixes leave both the difference and its SE at
    rounding level, where their ratio is meaningless. If no size qualifies
    the full explored size is returned with ``saturated=True``.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    diffs = path.diff_to_baseline
    ses = path.se_diff
    scale = max(1.0, float(np.max(np.abs(path.elpd))), abs(path.baseline_elpd))
    tol = 64.0 * np.finfo(float).eps * scale
    for size, diff, se in zip(path.sizes, diffs, ses):
        if abs(diff) <= tol:
            prob = 0.5
        elif se > 0:
            prob = float(ndtr(diff / se))
        else:
            prob = 1.0 if diff > 0 else 0.0
        if prob >= alpha:
            return SizeDecision(size=int(size), saturated=False)
    return SizeDecision(size=int(path.sizes[-1]), saturated=True)


# ---------------------------------------------------------------------------
# composed selector


def rhs_reference_builder(
    prior: PriorConfig | None = None, mcmc: McmcConfig | None = None
) -> Callable:
    """Reference builder fitting the sparse full-design regression."""

    def build(X, y) -> ReferenceFit:
        return fit_rhs_regression(X, y, prior=prior, mcmc=mcmc)

    return build


def spc_reference_builder(
    n_components: int = 4,
    ratio: float = 0.6,
    prior: PriorConfig | None = None,
    mcmc: McmcConfig | None = None,
) -> Callable:
    """Reference builder using supervised principal components."""

    def build(X, y) -> ReferenceFit:
        basis = screen_and_spc(X, y, n_components, ratio)
        return fit_spc_reference(basis, y, prior=prior, mcmc=mcmc)

    return build


def projpred_select(
    d: Dataset,
    cfg: ProjpredConfig | None = None,
    ref_builder: Callable | None = None,
    *,
    candidates: Sequence[int] | None = None,
    baseline: str = "reference",
    ref: ReferenceFit | None = None,
    folds: Sequence | None = None,
    fold_refs: Sequence | None = None,
) -> SelectionResult:
    """Full selection pass: reference fit, search, utility, size decision.

    ``candidates`` restricts the searched variables without changing the
    reference model. ``baseline`` chooses what the size rule compares
    against: the reference model or the best explored prefix. A prebuilt
    full-data ``ref`` and per-fold ``fold_refs`` skip the corresponding
    refits.
    """
    cfg = cfg or ProjpredConfig()
    if baseline not in ("reference", "best-submodel"):
        raise ConfigError(f"unknown baseline {baseline!r}")
    if ref_builder is None:
        ref_builder = rhs_reference_builder()
    if ref is None:
        ref = ref_builder(d.X, d.y)
    ranking = forward_search(
        ref,
        d.X,
        max_size=cfg.max_size,
        candidates=candidates,
        n_search_draws=cfg.n_search_draws,
    )
    path = estimate_utility_kfold(
        d.X,
        d.y,
        ranking,
        K=cfg.kfold,
        ref_builder=ref_builder,
        folds=folds,
        fold_refs=fold_refs,
        seed=cfg.seed,
    )
    if baseline == "best-submodel":
        path = path.rebase_to_best()
    decision = select_size(path, cfg.alpha)
    return SelectionResult(
        ranking=tuple(ranking),
        chosen_size=decision.size,
        chosen_idx=tuple(ranking[: decision.size]),
        utility=path,
        alpha=cfg.alpha,
        saturated=decision.saturated,
    )


def write_selection_csv(result: SelectionResult, path, column_names=None):
    """Serialize the utility path as (size, elpd, se_diff_to_baseline, added_variable)."""
    u = result.utility
    elpd = u.elpd
    se = u.se_diff
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "elpd", "se_diff_to_baseline", "added_variable"])
        for i, size in enumerate(u.sizes):
            var = u.added[i]
            if var < 0:
                name = ""
            elif column_names is not None:
                name = column_names[var]
            else:
                name = str(var)
            w.writerow([size, repr(float(elpd[i])), repr(float(se[i])), name])
