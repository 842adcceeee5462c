"""Selection-quality and stability metrics.

All functions are pure. Selections are passed either as integer index
collections or boolean masks; repeated runs are stacked into a
``SelectionMatrix`` for the entropy and stability summaries.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import DataError, UndefinedMetricError

__all__ = [
    "SelectionMatrix",
    "StabilityResult",
    "rmse",
    "fdr",
    "sensitivity",
    "inclusion_entropy",
    "stability",
]

log = logging.getLogger(__name__)


@dataclass
class SelectionMatrix:
    """Binary runs-by-variables inclusion matrix."""

    matrix: np.ndarray
    run_labels: list[str] = field(default=None)
    relevance: np.ndarray | None = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix)
        if self.matrix.ndim != 2:
            raise DataError("selection matrix must be 2-dimensional")
        if not np.isin(self.matrix, (0, 1)).all():
            raise DataError("selection matrix entries must be 0 or 1")
        self.matrix = self.matrix.astype(np.int8)
        if self.run_labels is None:
            self.run_labels = [f"run{i + 1}" for i in range(self.matrix.shape[0])]
        if len(self.run_labels) != self.matrix.shape[0]:
            raise DataError("run_labels length does not match run count")
        if self.relevance is not None:
            self.relevance = np.asarray(self.relevance, dtype=bool)
            if self.relevance.shape != (self.matrix.shape[1],):
                raise DataError("relevance mask length does not match variable count")

    @classmethod
    def from_sets(cls, sets, p: int, relevance=None) -> "SelectionMatrix":
        """Stack index sets into a binary matrix with ``p`` columns."""
        Z = np.zeros((len(sets), p), dtype=np.int8)
        for i, s in enumerate(sets):
            idx = np.asarray(sorted(s), dtype=int)
            if idx.size and (idx.min() < 0 or idx.max() >= p):
                raise DataError(f"run {i}: selected index out of range for p={p}")
            Z[i, idx] = 1
        return cls(matrix=Z, relevance=relevance)

    @property
    def n_runs(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_vars(self) -> int:
        return self.matrix.shape[1]


class StabilityResult(NamedTuple):
    estimate: float
    lo: float
    hi: float


def _as_bool_mask(selected, p: int) -> np.ndarray:
    arr = np.asarray(selected)
    if arr.dtype == bool:
        if arr.shape != (p,):
            raise DataError("boolean selection mask length does not match p")
        return arr
    mask = np.zeros(p, dtype=bool)
    idx = arr.astype(int).ravel()
    if idx.size:
        if idx.min() < 0 or idx.max() >= p:
            raise DataError(f"selected index out of range for p={p}")
        mask[idx] = True
    return mask


def rmse(y_true, y_pred) -> float:
    """Root mean squared error."""
    a = np.asarray(y_true, dtype=float).ravel()
    b = np.asarray(y_pred, dtype=float).ravel()
    if a.size == 0:
        raise UndefinedMetricError("rmse of empty input is undefined")
    if a.shape != b.shape:
        raise DataError("rmse inputs must have equal length")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def fdr(selected, relevant_mask) -> float:
    """Irrelevant fraction of the selected set; empty selection counts as 0."""
    relevant = np.asarray(relevant_mask, dtype=bool)
    mask = _as_bool_mask(selected, relevant.size)
    n_sel = int(mask.sum())
    if n_sel == 0:
        log.debug("fdr of an empty selection reported as 0 by convention")
        return 0.0
    false = int((mask & ~relevant).sum())
    return false / n_sel


def sensitivity(selected, relevant_mask) -> float:
    """Recovered fraction of the relevant variables."""
    relevant = np.asarray(relevant_mask, dtype=bool)
    n_rel = int(relevant.sum())
    if n_rel == 0:
        raise UndefinedMetricError("sensitivity is undefined with no relevant variables")
    mask = _as_bool_mask(selected, relevant.size)
    return int((mask & relevant).sum()) / n_rel


def inclusion_entropy(S: SelectionMatrix, set_frequency: bool = False) -> float:
    """Entropy of how inclusions spread over variables (natural log).

    Default: normalize the per-variable inclusion counts to a distribution
    over variables and return its entropy. With ``set_frequency=True``, use
    the frequencies of the distinct selected sets instead.
    """
    Z = S.matrix
    if set_frequency:
        _, counts = np.unique(Z, axis=0, return_counts=True)
        probs = counts / Z.shape[0]
    else:
        counts = Z.sum(axis=0).astype(float)
        total = counts.sum()
        if total == 0:
            raise UndefinedMetricError("entropy of an all-zero selection matrix is undefined")
        probs = counts / total
    probs = probs[probs > 0]
    return float(-(probs * np.log(probs)).sum())


def stability(S: SelectionMatrix, conf: float = 0.95) -> StabilityResult:
    """Agreement of selected sets across runs, with a normal-theory CI.

    The estimate is 1 minus the mean unbiased per-variable selection variance
    over its value under independent selection at the observed mean set size;
    1 means identical sets, 0 matches random selection, and negative raw
    values can occur (callers clip to [0, 1] for display). The CI uses the
    asymptotic variance of the estimator's influence decomposition.
    """
    Z = S.matrix.astype(float)
    M, p = Z.shape
    if M < 2:
        raise UndefinedMetricError("stability needs at least 2 runs")
    phat = Z.mean(axis=0)
    ki = Z.sum(axis=1)
    kbar = float(ki.mean())
    q = kbar / p
    denom = q * (1.0 - q)
    if denom == 0.0:
        raise UndefinedMetricError(
            "stability undefined when every run selects nothing or everything"
        )
    svar = phat * (1.0 - phat) * M / (M - 1)
    est = 1.0 - float(svar.mean()) / denom
    if not 0.0 <= est <= 1.0:
        log.debug("raw stability estimate %.4f outside [0, 1]", est)
    phi = (1.0 / denom) * (
        (Z * phat).mean(axis=1)
        - ki * kbar / p**2
        + (est / 2.0) * (2.0 * ki * kbar / p**2 - ki / p - kbar / p + 1.0)
    )
    var = 4.0 / M**2 * float(((phi - phi.mean()) ** 2).sum())
    z = float(stats.norm.ppf(0.5 + conf / 2.0))
    half = z * math.sqrt(var)
    return StabilityResult(est, est - half, est + half)
