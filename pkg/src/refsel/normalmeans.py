"""Complete selection on transformed correlations.

Sample correlations between each column and the target become approximately
Gaussian test statistics through the inverse hyperbolic tangent map scaled
by sqrt(n-3). Three selectors then operate on those statistics: local false
discovery rate control (spline-smoothed marginal density against the
standard normal null), empirical-Bayes posterior-median thresholding under
a spike-and-Laplace prior, and a horseshoe fit keeping coordinates whose
5%-95% posterior interval excludes zero. Each accepts statistics built from
the raw target or from a reference model's predictive means.
"""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError, DataError, EstimationError
from .refmodel import McmcConfig, ReferenceFit, _invgamma, predictive_means
from .rng import stream

log = logging.getLogger(__name__)

__all__ = [
    "NormalMeansProblem",
    "LocfdrModel",
    "fisher_problem",
    "filter_problem",
    "fit_locfdr",
    "locfdr_select",
    "laplace_posterior_median",
    "fit_spike_laplace",
    "ebayes_median_select",
    "ci90_select",
    "write_normal_means_csv",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NormalMeansProblem:
    """Independent Gaussian observations z_j of sparse means theta_j.

    ``sigma`` is the known observation scale (unit by default). ``r`` keeps
    the underlying sample correlations when the problem came from data;
    ``theta_truth`` carries simulation ground truth when available.
    """

    z: np.ndarray
    sigma: float = 1.0
    theta_truth: np.ndarray | None = None
    source: str = "raw"
    r: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).ravel())
        if not np.all(np.isfinite(self.z)):
            raise DataError("z contains non-finite values")
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise DataError(f"sigma must be a positive scale, got {self.sigma}")
        if self.source not in ("raw", "reference-filtered"):
            raise DataError(f"unknown source tag {self.source!r}")
        for name in ("theta_truth", "r"):
            v = getattr(self, name)
            if v is None:
                continue
            v = np.asarray(v, dtype=float).ravel()
            if v.shape != self.z.shape:
                raise DataError(f"{name} length does not match z")
            object.__setattr__(self, name, v)

    @property
    def p(self) -> int:
        return self.z.size


def fisher_problem(X, target, estimate_sigma: bool = False) -> NormalMeansProblem:
    """Per-column correlation statistics z_j = sqrt(n-3) * atanh(r_j).

    With ``estimate_sigma`` the scale is the sample standard deviation of
    the central block of z values (those below the 90th percentile of |z|)
    instead of the theoretical 1.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(target, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DataError("design and target dimensions do not match")
    n = X.shape[0]
    if n <= 3:
        raise DataError(f"the transform scale 1/(n-3) needs n >= 4, got n={n}")
    yc = y - y.mean()
    sy = float(np.linalg.norm(yc))
    if sy == 0.0:
        raise DataError("target is constant; correlations undefined")
    Xc = X - X.mean(axis=0)
    sx = np.linalg.norm(Xc, axis=0)
    dead = np.flatnonzero(sx == 0.0)
    if dead.size:
        raise DataError(f"column {dead[0]} is constant; correlation undefined")
    r = (Xc.T @ yc) / (sx * sy)
    degenerate = np.flatnonzero(np.abs(r) >= 1.0)
    if degenerate.size:
        raise DataError(
            f"column {degenerate[0]} is perfectly correlated with the target;"
            " the transform diverges"
        )
    z = math.sqrt(n - 3.0) * np.arctanh(r)
    sigma = 1.0
    if estimate_sigma:
        cut = np.quantile(np.abs(z), 0.9)
        block = z[np.abs(z) < cut]
        if block.size < 2 or float(np.std(block, ddof=1)) == 0.0:
            raise EstimationError("central z block has no spread to estimate sigma")
        sigma = float(np.std(block, ddof=1))
    return NormalMeansProblem(z=z, sigma=sigma, r=r, source="raw")


def filter_problem(
    problem_raw: NormalMeansProblem,
    ref: ReferenceFit,
    X,
    estimate_sigma: bool = False,
) -> NormalMeansProblem:
    """Rebuild the statistics against the reference's predictive means."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != problem_raw.p:
        raise DataError(
            f"design has {X.shape[1] if X.ndim == 2 else '?'} columns,"
            f" problem has {problem_raw.p}"
        )
    yhat = predictive_means(ref, X)
    rebuilt = fisher_problem(X, yhat, estimate_sigma=estimate_sigma)
    return NormalMeansProblem(
        z=rebuilt.z,
        sigma=rebuilt.sigma,
        theta_truth=problem_raw.theta_truth,
        source="reference-filtered",
        r=rebuilt.r,
    )


# ---------------------------------------------------------------------------
# local false discovery rate


@dataclass(frozen=True)
class LocfdrModel:
    """Histogram, smoothed marginal density, null weight, and per-z rates."""

    edges: np.ndarray
    counts: np.ndarray
    density: np.ndarray
    density_z: np.ndarray
    pi0: float
    locfdr: np.ndarray

    def __post_init__(self):
        if self.edges.size != self.counts.size + 1 or np.any(np.diff(self.edges) <= 0):
            raise DataError("histogram edges and counts disagree")
        if self.density.shape != self.counts.shape or np.any(self.density <= 0):
            raise DataError("density must be positive on every bin")
        if np.any(self.density_z <= 0) or not np.all(np.isfinite(self.density_z)):
            raise DataError("density must be positive at every observation")
        if not 0.0 < self.pi0 <= 1.0:
            raise DataError(f"pi0 must be in (0, 1], got {self.pi0}")
        if np.any(self.locfdr < 0) or np.any(self.locfdr > 1):
            raise DataError("loc.fdr values must lie in [0, 1]")
        if int(self.counts.sum()) != self.locfdr.size:
            raise DataError("histogram does not cover every observation")


def _natural_spline_basis(x, knots) -> np.ndarray:
    """Cubic spline basis that is linear beyond the boundary knots.

    Columns: constant, identity, then one curvature term per interior
    construction knot; dimension equals the number of knots.
    """
    x = np.asarray(x, dtype=float)
    K = knots.size

    def d(k):
        num = np.maximum(x - knots[k], 0.0) ** 3 - np.maximum(x - knots[-1], 0.0) ** 3
        return num / (knots[-1] - knots[k])

    cols = [np.ones_like(x), x]
    d_last = d(K - 2)
    for k in range(K - 2):
        cols.append(d(k) - d_last)
    return np.column_stack(cols)


def _poisson_spline_fit(x, counts, df):
    """Log-linear smooth of histogram counts by iterated reweighted LS."""
    knots = np.quantile(x, np.linspace(0.0, 1.0, df + 1))
    if np.unique(knots).size != knots.size:
        raise EstimationError("coincident spline knots; data range too narrow")
    B = _natural_spline_basis(x, knots)
    mu = counts + 0.5
    eta = np.log(mu)
    dev = math.inf
    for _ in range(200):
        sw = np.sqrt(mu)
        work = eta + (counts - mu) / mu
        coef, *_ = np.linalg.lstsq(B * sw[:, None], work * sw, rcond=None)
        eta = B @ coef
        mu = np.exp(np.clip(eta, -30.0, 30.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            lr = np.where(counts > 0, counts * np.log(counts / mu), 0.0)
        new_dev = 2.0 * float((lr - (counts - mu)).sum())
        if abs(new_dev - dev) < 1e-10 * (abs(new_dev) + 1.0):
            return coef, knots
        dev = new_dev
    raise EstimationError("marginal density fit did not converge")


def _null_logpdf(z, sigma):
    return -0.5 * (z / sigma) ** 2 - math.log(sigma) - 0.5 * _LOG_2PI


def fit_locfdr(problem: NormalMeansProblem, df: int = 7, n_bins: int = 120) -> LocfdrModel:
    """Smooth the z histogram and score every coordinate's null probability.

    The marginal density comes from a Poisson fit of bin counts on a
    natural spline basis; the null weight pi0 matches a quadratic fit of
    the central log density (|z| <= 1) against the null at zero.
    """
    if df < 3:
        raise ConfigError(f"spline needs at least 3 degrees of freedom, got {df}")
    if n_bins < 20:
        raise ConfigError(f"need at least 20 bins, got {n_bins}")
    z = problem.z
    if z.size < 50:
        raise DataError(f"density estimation needs at least 50 coordinates, got {z.size}")
    edges = np.linspace(z.min() - 0.1, z.max() + 0.1, n_bins + 1)
    counts = np.histogram(z, bins=edges)[0].astype(float)
    mids = 0.5 * (edges[:-1] + edges[1:])
    coef, knots = _poisson_spline_fit(mids, counts, df)
    log_norm = math.log(z.size * (edges[1] - edges[0]))
    log_density_mid = _natural_spline_basis(mids, knots) @ coef - log_norm

    window = np.abs(mids) <= 1.0
    if window.sum() < 5:  # z range barely covers the null bulk
        central = np.argsort(np.abs(mids))[:5]
        window = np.zeros(mids.size, dtype=bool)
        window[central] = True
    quad = np.polyfit(mids[window], log_density_mid[window], 2)
    pi0 = float(np.exp(quad[2] - _null_logpdf(0.0, problem.sigma)))
    if pi0 > 1.0:
        log.warning("null proportion estimate %.3f clipped to 1", pi0)
        pi0 = 1.0

    log_density_z = np.clip(_natural_spline_basis(z, knots) @ coef, -30.0, 30.0) - log_norm
    locfdr = np.clip(np.exp(math.log(pi0) + _null_logpdf(z, problem.sigma) - log_density_z), 0.0, 1.0)
    return LocfdrModel(
        edges=edges,
        counts=counts,
        density=np.exp(log_density_mid),
        density_z=np.exp(log_density_z),
        pi0=pi0,
        locfdr=locfdr,
    )


def locfdr_select(problem: NormalMeansProblem, df: int = 7, threshold: float = 0.2) -> tuple:
    """Coordinates whose local false discovery rate falls below threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    model = fit_locfdr(problem, df=df)
    return tuple(int(j) for j in np.flatnonzero(model.locfdr < threshold))


# ---------------------------------------------------------------------------
# empirical-Bayes posterior median


def _laplace_terms(zt, a):
    # log of the two half-line convolution pieces of the Laplace marginal
    t_neg = -a * zt + special.log_ndtr(zt - a)
    t_pos = a * zt + special.log_ndtr(-zt - a)
    return t_neg, t_pos


def laplace_posterior_median(z, w, a, sigma: float = 1.0) -> np.ndarray:
    """Posterior median of theta_j under a spike-and-Laplace prior.

    Prior: theta = 0 with probability 1-w, else Laplace with rate ``a`` (on
    the sigma-standardized scale). The median is exactly zero inside a
    threshold band of z, which is what makes it a selector.
    """
    if not 0.0 <= w <= 1.0:
        raise ConfigError(f"mixing weight must be in [0, 1], got {w}")
    if a <= 0:
        raise ConfigError(f"Laplace rate must be positive, got {a}")
    z = np.asarray(z, dtype=float)
    zt = np.abs(z) / sigma
    t_neg, t_pos = _laplace_terms(zt, a)
    log_den = np.logaddexp(t_neg, t_pos)
    log_g = math.log(a / 2.0) + a * a / 2.0 + log_den
    log_phi = -0.5 * zt**2 - 0.5 * _LOG_2PI
    with np.errstate(divide="ignore"):
        log_odds = math.log(w) - math.log1p(-w) if 0.0 < w < 1.0 else (
            -math.inf if w == 0.0 else math.inf
        )
    log_odds = log_odds + log_g - log_phi
    # P(theta > u | z) = C * Phi(zt - a - u) for u >= 0 with
    # C = P(theta != 0 | z) * exp(-a*zt) / D; the median solves that at 1/2,
    # so the inverse normal CDF carries the whole computation
    log_c = special.log_expit(log_odds) - a * zt - log_den
    arg = np.exp(-math.log(2.0) - log_c)
    med = np.where(
        arg >= 1.0,
        0.0,
        np.maximum(0.0, zt - a - special.ndtri(np.minimum(arg, 1.0 - 1e-16))),
    )
    return np.sign(z) * med * sigma


def _spike_laplace_loglik(zt, w, a) -> float:
    t_neg, t_pos = _laplace_terms(zt, a)
    log_g = math.log(a / 2.0) + a * a / 2.0 + np.logaddexp(t_neg, t_pos)
    log_phi = -0.5 * zt**2 - 0.5 * _LOG_2PI
    with np.errstate(divide="ignore"):
        lw = math.log(w) if w > 0 else -math.inf
        l1w = math.log1p(-w) if w < 1 else -math.inf
    return float(np.logaddexp(l1w + log_phi, lw + log_g).sum())


_W_LO, _W_HI = 1e-4, 1.0 - 1e-4
_A_LO, _A_HI = 0.01, 10.0


def fit_spike_laplace(z, sigma: float = 1.0, n_grid: int = 25) -> tuple[float, float]:
    """Marginal maximum likelihood for the spike weight and Laplace rate.

    Log-spaced grid scan followed by alternating one-dimensional zooms;
    derivative-free, so repeated runs land on the same point. Estimates
    pinned to the search boundary are flagged in the log.
    """
    zt = np.asarray(z, dtype=float).ravel() / sigma
    ws = np.geomspace(_W_LO, _W_HI, n_grid)
    aa = np.geomspace(_A_LO, _A_HI, n_grid)
    best = (-math.inf, ws[0], aa[0])
    for w in ws:
        for a in aa:
            ll = _spike_laplace_loglik(zt, w, a)
            if ll > best[0]:
                best = (ll, w, a)
    _, w, a = best
    w_span = ws[1] / ws[0]
    a_span = aa[1] / aa[0]
    for _ in range(4):
        grid_w = np.clip(np.geomspace(w / w_span, w * w_span, 17), _W_LO, _W_HI)
        lls = [_spike_laplace_loglik(zt, wi, a) for wi in grid_w]
        w = float(grid_w[int(np.argmax(lls))])
        grid_a = np.clip(np.geomspace(a / a_span, a * a_span, 17), _A_LO, _A_HI)
        lls = [_spike_laplace_loglik(zt, w, ai) for ai in grid_a]
        a = float(grid_a[int(np.argmax(lls))])
        w_span = w_span**0.5
        a_span = a_span**0.5
    if w <= _W_LO * 1.05 or w >= 1.0 - _W_LO * 1.05:
        log.warning("mixing weight pinned to the search boundary: w=%.2e", w)
    if a <= _A_LO * 1.05 or a >= _A_HI * 0.95:
        log.warning("Laplace rate pinned to the search boundary: a=%.3f", a)
    return w, a


def ebayes_median_select(problem: NormalMeansProblem) -> tuple:
    """Coordinates whose posterior median is nonzero under the fitted prior."""
    if problem.p < 10:
        raise DataError(f"marginal likelihood needs at least 10 coordinates, got {problem.p}")
    w, a = fit_spike_laplace(problem.z, problem.sigma)
    med = laplace_posterior_median(problem.z, w, a, problem.sigma)
    return tuple(int(j) for j in np.flatnonzero(med != 0.0))


# ---------------------------------------------------------------------------
# credible-interval selection


def ci90_select(
    problem: NormalMeansProblem,
    mcmc: McmcConfig | None = None,
    slab_scale: float = 3.0,
) -> tuple:
    """Coordinates whose 5%-95% posterior interval excludes zero.

    Gibbs sampler for theta_j with heavy-tailed local scales, a shared
    global scale (half-Cauchy via inverse-gamma mixing), and a Gaussian
    slab bounding each prior variance; the observation scale is known, so
    it is never sampled.
    """
    if problem.p < 1:
        raise DataError("empty problem")
    mcmc = mcmc or McmcConfig()
    z = problem.z
    p = z.size
    sigma2 = problem.sigma**2
    c2 = (slab_scale * max(float(np.std(z)), problem.sigma)) ** 2
    rng = stream(mcmc.seed, "ci90")
    lam2 = np.ones(p)
    nu = np.ones(p)
    tau2, xi = 1.0, 1.0
    keep_idx = set(mcmc.thin_indices().tolist())
    kept = np.empty((len(keep_idx), p))
    row = 0
    for t in range(mcmc.warmup + mcmc.draws):
        v = 1.0 / (1.0 / (tau2 * lam2) + 1.0 / c2)
        ratio = v / (v + sigma2)
        theta = ratio * z + np.sqrt(ratio * sigma2) * rng.standard_normal(p)
        b2 = theta**2
        lam2 = _invgamma(rng, 1.0, 1.0 / nu + b2 / (2.0 * tau2))
        nu = _invgamma(rng, 1.0, 1.0 + 1.0 / lam2)
        tau2 = float(_invgamma(rng, (p + 1) / 2.0, 1.0 / xi + float((b2 / lam2).sum()) / 2.0))
        xi = float(_invgamma(rng, 1.0, 1.0 + 1.0 / tau2))
        if t >= mcmc.warmup and (t - mcmc.warmup) in keep_idx:
            kept[row] = theta
            row += 1
    lo, hi = np.quantile(kept, [0.05, 0.95], axis=0)
    return tuple(int(j) for j in np.flatnonzero((lo > 0.0) | (hi < 0.0)))


# ---------------------------------------------------------------------------
# serialization


def write_normal_means_csv(path, problem: NormalMeansProblem, selections: dict, column_names=None):
    """Write one row per coordinate: variable, r, z, and 0/1 method flags.

    ``selections`` maps method names to selected index collections; its
    insertion order fixes the column order.
    """
    methods = list(selections)
    chosen = {m: set(int(j) for j in selections[m]) for m in methods}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "r", "z"] + methods)
        for j in range(problem.p):
            name = column_names[j] if column_names is not None else str(j)
            r_val = "" if problem.r is None else repr(float(problem.r[j]))
            w.writerow(
                [name, r_val, repr(float(problem.z[j]))]
                + [1 if j in chosen[m] else 0 for m in methods]
            )
