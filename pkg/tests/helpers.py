"""Small shared utilities for the test suite."""

import numpy as np


def batch_se(draws: np.ndarray, n_batches: int = 10) -> np.ndarray:
    """Batch-means standard error of a (possibly autocorrelated) chain mean."""
    draws = np.asarray(draws)
    S = draws.shape[0]
    edges = np.linspace(0, S, n_batches + 1).astype(int)
    means = np.stack([draws[a:b].mean(axis=0) for a, b in zip(edges[:-1], edges[1:])])
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def cor(a, b) -> float:
    return float(np.corrcoef(np.asarray(a).ravel(), np.asarray(b).ravel())[0, 1])


def fake_reference(mean_draws, sigma_draws, p):
    """Reference container wired straight from given predictive draws."""
    from refsel.refmodel import ReferenceFit, StandardizedBasis

    mean_draws = np.asarray(mean_draws, dtype=float)
    S = mean_draws.shape[0]
    return ReferenceFit(
        alpha_draws=np.zeros(S),
        beta_draws=np.zeros((S, p)),
        sigma_draws=np.asarray(sigma_draws, dtype=float),
        mean_draws=mean_draws,
        yhat=mean_draws.mean(axis=0),
        basis=StandardizedBasis(center=np.zeros(p), scale=np.ones(p)),
    )


def fake_linear_reference(X, beta, alpha=0.0, sigma=1.0, n_draws=120):
    """Reference whose predictive mean is exactly alpha + X @ beta anywhere."""
    from refsel.refmodel import ReferenceFit, StandardizedBasis

    X = np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    p = X.shape[1]
    f = alpha + X @ beta
    return ReferenceFit(
        alpha_draws=np.full(n_draws, float(alpha)),
        beta_draws=np.tile(beta, (n_draws, 1)),
        sigma_draws=np.full(n_draws, float(sigma)),
        mean_draws=np.tile(f, (n_draws, 1)),
        yhat=f.copy(),
        basis=StandardizedBasis(center=np.zeros(p), scale=np.ones(p)),
    )
