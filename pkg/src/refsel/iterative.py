"""Iterated subset selection for signals spread over several variable groups.

A single selection pass keeps the smallest subset whose predictive utility
plausibly matches the best explored one, so among correlated variables it
returns one compact group and leaves the rest behind. Repeating the pass on
the leftover candidates, against the same reference model, accumulates those
groups until a pass comes back empty. The lasso variant runs the same loop
without any reference model, which makes the two directly comparable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

from .baselines import lasso_cv
from .datagen import Dataset
from .errors import ConfigError, DataError
from .projpred import (
    ProjpredConfig,
    kfold_splits,
    projpred_select,
    rhs_reference_builder,
)
from .refmodel import ReferenceFit

__all__ = [
    "IterConfig",
    "IterState",
    "IterationRecord",
    "iterative_lasso",
    "iterative_projpred",
    "write_iteration_csv",
]


class IterationRecord(NamedTuple):
    """One loop pass: what was added and what it was judged against."""

    iteration: int
    added: tuple
    baseline_elpd: float
    chosen_size: int
    result: object = None


@dataclass(frozen=True)
class IterState:
    """Remaining candidate pool, accumulated selection, and the pass log.

    ``selected`` keeps selection order across passes; ``remaining`` holds
    everything never chosen. ``exhausted`` flags a stop forced by the
    iteration cap rather than by an empty choice or an empty pool.
    """

    remaining: tuple
    selected: tuple
    iteration: int
    log: tuple = ()
    exhausted: bool = False

    def __post_init__(self):
        rem = set(self.remaining)
        sel = set(self.selected)
        if len(rem) != len(self.remaining) or len(sel) != len(self.selected):
            raise DataError("candidate and selected indices must be unique")
        if rem & sel:
            raise DataError("a variable cannot be both selected and still a candidate")
        if self.iteration < 0:
            raise DataError("iteration counter cannot be negative")


@dataclass(frozen=True)
class IterConfig:
    """Loop cap plus the knobs handed to the inner selection pass."""

    alpha: float = 0.16
    max_iters: int = 20
    kfold: int = 10
    max_size: int | None = None
    n_search_draws: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be positive, got {self.max_iters}")
        self._inner(1)  # delegate the remaining field checks

    def _inner(self, n_candidates: int) -> ProjpredConfig:
        cap = self.max_size
        if cap is not None:
            cap = min(cap, n_candidates)
        return ProjpredConfig(
            alpha=self.alpha,
            kfold=self.kfold,
            max_size=cap,
            n_search_draws=self.n_search_draws,
            seed=self.seed,
        )


def iterative_projpred(
    d: Dataset,
    cfg: IterConfig | None = None,
    ref_builder: Callable | None = None,
    *,
    ref: ReferenceFit | None = None,
    folds: Sequence | None = None,
    fold_refs: Sequence | None = None,
) -> IterState:
    """Accumulate minimal projected subsets until one pass selects nothing.

    The reference model and the per-fold references for the utility
    estimate are fit once up front and shared by every pass; only the
    candidate pool shrinks. Each pass ranks the remaining variables,
    sizes the prefix against the best submodel explored in that same
    pass, and moves the chosen variables out of the pool. The loop stops
    on an empty choice (the empty prefix qualifying means nothing left
    carries signal), an empty pool, or after ``max_iters`` passes, the
    last flagged via ``exhausted``. Prebuilt ``ref``, ``folds`` and
    ``fold_refs`` skip the corresponding setup work.
    """
    cfg = cfg or IterConfig()
    if ref_builder is None:
        ref_builder = rhs_reference_builder()
    if ref is None:
        ref = ref_builder(d.X, d.y)
    if folds is None:
        folds = kfold_splits(d.n, cfg.kfold, seed=cfg.seed)
    if fold_refs is None:
        fold_refs = [ref_builder(d.X[train], d.y[train]) for train, _ in folds]

    remaining = list(range(d.p))
    selected: list = []
    log: list = []
    exhausted = False
    iteration = 0
    while remaining:
        if iteration == cfg.max_iters:
            exhausted = True
            break
        iteration += 1
        res = projpred_select(
            d,
            cfg._inner(len(remaining)),
            ref_builder,
            candidates=remaining,
            baseline="best-submodel",
            ref=ref,
            folds=folds,
            fold_refs=fold_refs,
        )
        log.append(
            IterationRecord(
                iteration=iteration,
                added=res.chosen_idx,
                baseline_elpd=res.utility.baseline_elpd,
                chosen_size=res.chosen_size,
                result=res,
            )
        )
        if res.chosen_size == 0:
            break
        selected.extend(res.chosen_idx)
        chosen = set(res.chosen_idx)
        remaining = [j for j in remaining if j not in chosen]
    return IterState(
        remaining=tuple(remaining),
        selected=tuple(selected),
        iteration=iteration,
        log=tuple(log),
        exhausted=exhausted,
    )


def iterative_lasso(d: Dataset, cfg: IterConfig | None = None) -> IterState:
    """Same accumulation loop with a cross-validated L1 inner selector.

    Each pass fits the penalized path on the remaining columns only and
    adds the active set of the one-SE solution; no reference model is
    involved anywhere. Stops when the active set comes back empty, the
    pool empties, or ``max_iters`` is hit. Log entries carry no
    ``baseline_elpd`` (recorded as nan) since the inner selector has no
    predictive baseline.
    """
    cfg = cfg or IterConfig()
    remaining = list(range(d.p))
    selected: list = []
    log: list = []
    exhausted = False
    iteration = 0
    while remaining:
        if iteration == cfg.max_iters:
            exhausted = True
            break
        iteration += 1
        sub = Dataset(X=d.X[:, remaining], y=d.y)
        fit = lasso_cv(sub, K=cfg.kfold, seed=cfg.seed)
        added = tuple(remaining[j] for j in fit.active)
        log.append(
            IterationRecord(
                iteration=iteration,
                added=added,
                baseline_elpd=float("nan"),
                chosen_size=len(added),
                result=fit,
            )
        )
        if not added:
            break
        selected.extend(added)
        chosen = set(added)
        remaining = [j for j in remaining if j not in chosen]
    return IterState(
        remaining=tuple(remaining),
        selected=tuple(selected),
        iteration=iteration,
        log=tuple(log),
        exhausted=exhausted,
    )


def write_iteration_csv(state: IterState, path, column_names: Sequence[str] | None = None):
    """Pass log as (iteration, variables_added, baseline_elpd, chosen_size).

    ``variables_added`` joins the added variables with ';' (column names
    when given, zero-based indices otherwise); ``baseline_elpd`` is left
    blank for selectors without a predictive baseline.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "variables_added", "baseline_elpd", "chosen_size"])
        for rec in state.log:
            if column_names is None:
                names = [str(j) for j in rec.added]
            else:
                names = [column_names[j] for j in rec.added]
            elpd = "" if math.isnan(rec.baseline_elpd) else repr(float(rec.baseline_elpd))
            w.writerow([rec.iteration, ";".join(names), elpd, rec.chosen_size])
