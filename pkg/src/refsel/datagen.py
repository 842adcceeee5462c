"""Synthetic data generation, noise augmentation, resampling, and CSV ingestion.

The generator draws a latent signal ``f ~ N(0, 1)`` per observation, a target
``y = f + N(0, 1)``, and predictors where the first ``k`` columns are
``sqrt(rho) * f + N(0, 1 - rho)`` (unit variance, correlation ``sqrt(rho)``
with ``f`` and ``sqrt(rho/2)`` with ``y``) and the remaining columns are pure
standard-normal noise. Columns are not standardized here; selectors that need
standardization do it internally.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .rng import stream

__all__ = [
    "GenConfig",
    "Dataset",
    "gen_latent_regression",
    "augment_with_noise",
    "bootstrap_sample",
    "subsample",
    "load_csv",
]


@dataclass(frozen=True)
class GenConfig:
    """Configuration of the latent-signal generator."""

    n: int
    p: int
    k: int
    rho: float
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if self.p < 0:
            raise ConfigError(f"p must be >= 0, got {self.p}")
        if not 0 <= self.k <= self.p:
            raise ConfigError(f"k must satisfy 0 <= k <= p, got k={self.k}, p={self.p}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must be in [0, 1), got {self.rho}")
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")


@dataclass
class Dataset:
    """Observation matrix, target, and optional ground truth.

    ``relevant`` marks columns carrying signal (exactly ``k`` true entries
    when produced by the generator); ``latent_f`` is the latent signal when
    known. Both stay ``None`` for ingested real data.
    """

    X: np.ndarray
    y: np.ndarray
    latent_f: np.ndarray | None = None
    relevant: np.ndarray | None = None
    column_names: list[str] = field(default=None)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError(f"X must be 2-dimensional, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise DataError(
                f"y length {self.y.shape} does not match X rows {self.X.shape[0]}"
            )
        if not np.all(np.isfinite(self.X)):
            raise DataError("X contains non-finite values")
        if not np.all(np.isfinite(self.y)):
            raise DataError("y contains non-finite values")
        if self.latent_f is not None:
            self.latent_f = np.asarray(self.latent_f, dtype=np.float64)
            if self.latent_f.shape != self.y.shape:
                raise DataError("latent_f length does not match y")
        if self.relevant is not None:
            self.relevant = np.asarray(self.relevant, dtype=bool)
            if self.relevant.shape != (self.X.shape[1],):
                raise DataError("relevant mask length does not match X columns")
        if self.column_names is None:
            self.column_names = [f"x{j + 1}" for j in range(self.X.shape[1])]
        else:
            self.column_names = [str(c) for c in self.column_names]
            if len(self.column_names) != self.X.shape[1]:
                raise DataError("column_names length does not match X columns")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def _rows(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            X=self.X[idx],
            y=self.y[idx],
            latent_f=None if self.latent_f is None else self.latent_f[idx],
            relevant=self.relevant,
            column_names=list(self.column_names),
        )


def gen_latent_regression(cfg: GenConfig) -> Dataset:
    """Draw one dataset from the latent-signal mechanism.

    Parameters
    ----------
    cfg : GenConfig
        Validated generator configuration.

    Returns
    -------
    Dataset
        ``n x p`` design with the first ``k`` columns relevant, the latent
        signal in ``latent_f``, and the relevance mask populated.
    """
    rng = stream(cfg.seed, "gen")
    f = rng.standard_normal(cfg.n)
    y = f + rng.standard_normal(cfg.n)
    X = np.empty((cfg.n, cfg.p))
    if cfg.k > 0:
        noise_sd = math.sqrt(1.0 - cfg.rho)
        X[:, : cfg.k] = (
            math.sqrt(cfg.rho) * f[:, None]
            + noise_sd * rng.standard_normal((cfg.n, cfg.k))
        )
    if cfg.p > cfg.k:
        X[:, cfg.k :] = rng.standard_normal((cfg.n, cfg.p - cfg.k))
    relevant = np.zeros(cfg.p, dtype=bool)
    relevant[: cfg.k] = True
    return Dataset(X=X, y=y, latent_f=f, relevant=relevant)


def augment_with_noise(d: Dataset, total_p: int, seed: int) -> Dataset:
    """Append standard-normal noise columns until the design has ``total_p``.

    Appended columns are flagged irrelevant and named ``noise1, noise2, ...``;
    original columns keep their labels. When the input has no relevance mask
    (real data), the original block is treated as signal so that noisy-count
    summaries stay defined.
    """
    if total_p <= d.p:
        raise ConfigError(
            f"total_p must exceed the current column count, got {total_p} <= {d.p}"
        )
    extra = total_p - d.p
    rng = stream(seed, "augment")
    Z = rng.standard_normal((d.n, extra))
    base_mask = d.relevant if d.relevant is not None else np.ones(d.p, dtype=bool)
    return Dataset(
        X=np.hstack([d.X, Z]),
        y=d.y,
        latent_f=d.latent_f,
        relevant=np.concatenate([base_mask, np.zeros(extra, dtype=bool)]),
        column_names=list(d.column_names) + [f"noise{j + 1}" for j in range(extra)],
    )


def bootstrap_sample(d: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """Resample ``n`` rows with replacement; return (train, out-of-bag).

    The out-of-bag part holds the rows never drawn (possibly empty), so the
    union of the two index sets covers the original rows.
    """
    if d.n < 1:
        raise DataError("cannot bootstrap an empty dataset")
    rng = stream(seed, "bootstrap")
    idx = rng.integers(0, d.n, size=d.n)
    drawn = np.zeros(d.n, dtype=bool)
    drawn[idx] = True
    oob_idx = np.flatnonzero(~drawn)
    return d._rows(idx), d._rows(oob_idx)


def subsample(d: Dataset, m: int, seed: int) -> Dataset:
    """Draw ``m`` rows with replacement."""
    if m < 1:
        raise ConfigError(f"subsample size must be >= 1, got {m}")
    if d.n < 1:
        raise DataError("cannot subsample an empty dataset")
    rng = stream(seed, "subsample")
    idx = rng.integers(0, d.n, size=m)
    return d._rows(idx)


def load_csv(path, target: str) -> Dataset:
    """Read a real dataset from CSV.

    Expects a header row of column names, comma separation, '.' decimals, and
    UTF-8 encoding; ``target`` names the numeric target column and every other
    column becomes a predictor.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            header = [h.strip() for h in header]
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise DataError(
                        f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                    )
                try:
                    rows.append([float(cell) for cell in row])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: non-numeric value ({exc})") from None
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None
    if target not in header:
        raise DataError(f"{path}: target column '{target}' not in header {header}")
    if not rows:
        raise DataError(f"{path}: no data rows")
    M = np.asarray(rows, dtype=np.float64)
    t = header.index(target)
    keep = [j for j in range(len(header)) if j != t]
    return Dataset(
        X=M[:, keep],
        y=M[:, t],
        column_names=[header[j] for j in keep],
    )
