"""Experiment orchestration: presets, persistence, and plot-data emission.

A run is a grid of cells, one per (scenario, replication); each cell
evaluates every configured method on the same dataset so that filtered and
unfiltered variants pair up exactly. Cell seeds derive from the master seed
and the cell's identity alone, so cells can run in any order, in parallel,
or be recomputed after an interruption without changing a single value.
Records append to a JSON-lines file; aggregates and figure tables are
rebuilt from the full record set with canonical ordering, which makes
resumed and fresh runs byte-identical.
"""

from __future__ import annotations

import csv
import json
import logging
import pathlib
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import yaml

from .baselines import BayesStepConfig, StepConfig, bayes_stepwise, lasso_cv, steplm
from .datagen import (
    Dataset,
    GenConfig,
    augment_with_noise,
    bootstrap_sample,
    gen_latent_regression,
    load_csv,
    subsample,
)
from .errors import ConfigError, DataError, UndefinedMetricError
from .iterative import IterConfig, iterative_lasso, iterative_projpred
from .metrics import SelectionMatrix, fdr, inclusion_entropy, rmse, sensitivity, stability
from .normalmeans import (
    ci90_select,
    ebayes_median_select,
    filter_problem,
    fisher_problem,
    locfdr_select,
)
from .projpred import (
    ProjpredConfig,
    kfold_splits,
    projpred_select,
    rhs_reference_builder,
    spc_reference_builder,
)
from .refmodel import McmcConfig, ReferenceFit, fit_spc_reference, screen_and_spc
from .rng import seed_sequence

__all__ = [
    "ExperimentConfig",
    "RunRecord",
    "emit_plotdata",
    "load_records",
    "run_experiment",
    "validate_config",
]

log = logging.getLogger(__name__)

TARGET_COLUMN = "siri"

# method grammar: a base selector name, optionally "+ref" for the variant
# that replaces the target with reference-model predictions before selecting
_FILTERABLE = ("steplm", "bayes", "lasso", "locfdr", "ebmed", "ci90")
_NEVER_FILTERED = ("projpred", "iter_projpred", "iter_lasso")
_BASES = _FILTERABLE + _NEVER_FILTERED

_SIM1_METHODS = ("projpred", "steplm", "steplm+ref", "bayes", "bayes+ref")
_COMPLETE_METHODS = (
    "locfdr",
    "locfdr+ref",
    "ebmed",
    "ebmed+ref",
    "ci90",
    "ci90+ref",
    "iter_projpred",
    "iter_lasso",
)

_PRESET_DEFAULTS = {
    "bodyfat1": dict(methods=("projpred", "steplm"), n_grid=(251,), rho_grid=()),
    "bodyfat2": dict(methods=("steplm", "steplm+ref"), n_grid=(251,), rho_grid=()),
    "bodyfat3": dict(methods=_COMPLETE_METHODS, n_grid=(50, 100, 251), rho_grid=()),
    "sim1": dict(
        methods=_SIM1_METHODS, n_grid=(100, 200, 400), rho_grid=(0.3, 0.5), p=70, k=20
    ),
    "sim2": dict(
        methods=_COMPLETE_METHODS, n_grid=(50, 70, 100), rho_grid=(0.3, 0.5), p=1000, k=100
    ),
    "custom": dict(),
}

_DEFAULT_FIGURES = {
    "bodyfat1": ("inclusion", "entropy"),
    "bodyfat2": ("filter_effect",),
    "bodyfat3": ("sensitivity_vs_fdr", "stability"),
    "sim1": ("rmse_vs_fdr", "entropy"),
    "sim2": ("sensitivity_vs_fdr", "stability"),
    "custom": (),
}

FIGURES = (
    "rmse_vs_fdr",
    "sensitivity_vs_fdr",
    "entropy",
    "stability",
    "inclusion",
    "filter_effect",
)


def parse_method(spec: str) -> tuple[str, bool]:
    """Split a method spec into (base name, reference-filtered flag)."""
    name = spec.strip()
    filtered = name.endswith("+ref")
    base = name[: -len("+ref")] if filtered else name
    if base not in _BASES:
        raise ConfigError(f"unknown method {spec!r}; known bases: {', '.join(_BASES)}")
    if filtered and base in _NEVER_FILTERED:
        raise ConfigError(
            f"{spec!r} is not a valid variant: {base} has a fixed relationship "
            "to the reference model"
        )
    return base, filtered


def method_label(base: str, filtered: bool) -> str:
    return f"{base}+ref" if filtered else base


@dataclass(frozen=True)
class ExperimentConfig:
    """Effective settings of one experiment run."""

    preset: str
    replications: int = 100
    scale: float = 1.0
    seed: int = 0
    out: str = ""
    jobs: int = 1
    methods: tuple = ()
    alpha: float = 0.16
    kfold: int = 10
    n_grid: tuple = ()
    rho_grid: tuple = ()
    p: int = 0
    k: int = 0
    data: str = "data/bodyfat_synthetic.csv"
    total_p: int = 100
    max_iters: int = 20
    mcmc_warmup: int = 500
    mcmc_draws: int = 300
    mcmc_keep: int = 200

    def __post_init__(self):
        if self.preset not in _PRESET_DEFAULTS:
            raise ConfigError(
                f"preset: must be one of {', '.join(sorted(_PRESET_DEFAULTS))}, "
                f"got {self.preset!r}"
            )
        if self.replications < 1:
            raise ConfigError(f"replications: must be >= 1, got {self.replications}")
        if not 0.0 < self.scale <= 1.0:
            raise ConfigError(f"scale: must lie in (0, 1], got {self.scale}")
        if self.jobs < 1:
            raise ConfigError(f"jobs: must be >= 1, got {self.jobs}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha: must lie in (0, 1), got {self.alpha}")
        if self.kfold < 2:
            raise ConfigError(f"kfold: must be >= 2, got {self.kfold}")
        if not self.methods:
            raise ConfigError("methods: must not be empty")
        for m in self.methods:
            parse_method(m)
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods: duplicates are not allowed")
        if not self.n_grid:
            raise ConfigError("n_grid: must not be empty")
        for i, n in enumerate(self.n_grid):
            if n < 8:
                raise ConfigError(f"n_grid[{i}]: must be >= 8, got {n}")
        for i, r in enumerate(self.rho_grid):
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"rho_grid[{i}]: must lie in [0, 1), got {r}")
        if self._simulated:
            if not self.rho_grid:
                raise ConfigError("rho_grid: must not be empty for simulated presets")
            if self.p < 2:
                raise ConfigError(f"p: must be >= 2 for simulated presets, got {self.p}")
            if not 1 <= self.k <= self.p:
                raise ConfigError(f"k: must lie in [1, p], got {self.k}")
        else:
            if self.total_p < 14:
                raise ConfigError(f"total_p: must be >= 14, got {self.total_p}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters: must be >= 1, got {self.max_iters}")
        for name in ("mcmc_warmup", "mcmc_draws", "mcmc_keep"):
            if getattr(self, name) < 10:
                raise ConfigError(
                    f"mcmc.{name.split('_')[1]}: must be >= 10, got {getattr(self, name)}"
                )

    @property
    def _simulated(self) -> bool:
        return self.preset in ("sim1", "sim2", "custom")

    @property
    def effective_replications(self) -> int:
        return max(1, round(self.replications * self.scale))

    @property
    def out_dir(self) -> str:
        return self.out or f"runs/{self.preset}"

    def identity(self) -> dict:
        """Everything that determines record values (scheduling excluded)."""
        d = asdict(self)
        d.pop("jobs")
        d.pop("out")
        d["methods"] = list(self.methods)
        d["n_grid"] = list(self.n_grid)
        d["rho_grid"] = [float(r) for r in self.rho_grid]
        d["effective_replications"] = self.effective_replications
        return d

    def describe(self) -> list[str]:
        lines = [f"preset = {self.preset}"]
        lines.append(
            f"replications = {self.replications} x scale {self.scale:g} "
            f"-> {self.effective_replications}"
        )
        lines.append(f"seed = {self.seed}")
        lines.append(f"out = {self.out_dir}")
        lines.append(f"jobs = {self.jobs}")
        lines.append(f"methods = {', '.join(self.methods)}")
        lines.append(f"alpha = {self.alpha:g}, kfold = {self.kfold}")
        lines.append(f"n_grid = {list(self.n_grid)}")
        if self.rho_grid:
            lines.append(f"rho_grid = {[float(r) for r in self.rho_grid]}")
        if self._simulated:
            lines.append(f"p = {self.p}, k = {self.k}")
        else:
            lines.append(f"data = {self.data}, total_p = {self.total_p}")
        lines.append(
            f"mcmc = warmup {self.mcmc_warmup}, draws {self.mcmc_draws}, "
            f"keep {self.mcmc_keep}"
        )
        lines.append(f"max_iters = {self.max_iters}")
        return lines


_SCHEMA = {
    "preset": str,
    "replications": int,
    "scale": float,
    "seed": int,
    "out": str,
    "jobs": int,
    "methods": list,
    "alpha": float,
    "kfold": int,
    "n_grid": list,
    "rho_grid": list,
    "p": int,
    "k": int,
    "data": str,
    "total_p": int,
    "max_iters": int,
    "mcmc": dict,
}


def _want_int(path: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    return value


def _want_float(path: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    return float(value)


def _want_str(path: str, value) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def validate_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Load, default, and invariant-check a config file.

    The file is a key-value document with one optional nested section
    (``mcmc``). Unknown keys, wrong types, and out-of-range values raise
    ``ConfigError`` naming the offending field path. ``overrides`` (from
    command-line flags) replace file values before preset defaults fill in
    the rest.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not parseable: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping of settings")
    for key in raw:
        if key not in _SCHEMA:
            raise ConfigError(f"{key}: unknown key")
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    if "preset" not in raw:
        raise ConfigError("preset: required")
    preset = _want_str("preset", raw["preset"])
    if preset not in _PRESET_DEFAULTS:
        raise ConfigError(
            f"preset: must be one of {', '.join(sorted(_PRESET_DEFAULTS))}, got {preset!r}"
        )

    kw: dict = {"preset": preset}
    for key in ("replications", "seed", "jobs", "kfold", "p", "k", "total_p", "max_iters"):
        if key in raw:
            kw[key] = _want_int(key, raw[key])
    for key in ("scale", "alpha"):
        if key in raw:
            kw[key] = _want_float(key, raw[key])
    for key in ("out", "data"):
        if key in raw:
            kw[key] = _want_str(key, raw[key])
    if "methods" in raw:
        if not isinstance(raw["methods"], list):
            raise ConfigError(f"methods: expected a list, got {raw['methods']!r}")
        methods = []
        for i, m in enumerate(raw["methods"]):
            name = _want_str(f"methods[{i}]", m)
            try:
                parse_method(name)
            except ConfigError as exc:
                raise ConfigError(f"methods[{i}]: {exc}") from None
            methods.append(name)
        kw["methods"] = tuple(methods)
    if "n_grid" in raw:
        if not isinstance(raw["n_grid"], list):
            raise ConfigError(f"n_grid: expected a list, got {raw['n_grid']!r}")
        kw["n_grid"] = tuple(
            _want_int(f"n_grid[{i}]", v) for i, v in enumerate(raw["n_grid"])
        )
    if "rho_grid" in raw:
        if not isinstance(raw["rho_grid"], list):
            raise ConfigError(f"rho_grid: expected a list, got {raw['rho_grid']!r}")
        rhos = []
        for i, v in enumerate(raw["rho_grid"]):
            r = _want_float(f"rho_grid[{i}]", v)
            if not 0.0 <= r < 1.0:
                raise ConfigError(f"rho_grid[{i}]: must lie in [0, 1), got {r}")
            rhos.append(r)
        kw["rho_grid"] = tuple(rhos)
    if "mcmc" in raw:
        if not isinstance(raw["mcmc"], dict):
            raise ConfigError(f"mcmc: expected a mapping, got {raw['mcmc']!r}")
        for key in raw["mcmc"]:
            if key not in ("warmup", "draws", "keep"):
                raise ConfigError(f"mcmc.{key}: unknown key")
            kw[f"mcmc_{key}"] = _want_int(f"mcmc.{key}", raw["mcmc"][key])

    for key, value in _PRESET_DEFAULTS[preset].items():
        kw.setdefault(key, value)
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class RunRecord:
    """One method's outcome on one replication of one scenario."""

    scenario: str
    method: str
    filtered: bool
    replication: int
    seed: int
    selected: tuple
    metrics: dict
    wall_time: float
    error: str | None = None

    @property
    def key(self) -> tuple:
        return (self.scenario, self.method, self.filtered, self.replication)

    @property
    def label(self) -> str:
        return method_label(self.method, self.filtered)

    def to_json(self) -> str:
        payload = {
            "scenario": self.scenario,
            "method": self.method,
            "filtered": self.filtered,
            "replication": self.replication,
            "seed": self.seed,
            "selected": [int(j) for j in self.selected],
            "metrics": self.metrics,
            "wall_time": self.wall_time,
            "error": self.error,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        obj = json.loads(line)
        return cls(
            scenario=obj["scenario"],
            method=obj["method"],
            filtered=obj["filtered"],
            replication=obj["replication"],
            seed=obj["seed"],
            selected=tuple(obj["selected"]),
            metrics=obj["metrics"],
            wall_time=obj["wall_time"],
            error=obj.get("error"),
        )


def _cell_seeds(cfg: ExperimentConfig, scenario: str, replication: int) -> list[int]:
    ss = seed_sequence(cfg.seed, "bench", scenario, replication)
    return [int(v) for v in ss.generate_state(4)]


def _fmt_rho(rho: float) -> str:
    return f"{float(rho):g}"


def _scenario_params(scenario: str) -> dict:
    out = {}
    for part in scenario.split(","):
        if "=" in part:
            key, value = part.split("=", 1)
            out[key] = value
    return out


# ---------------------------------------------------------------------------
# shared method plumbing


def _mcmc(cfg: ExperimentConfig, seed: int) -> McmcConfig:
    return McmcConfig(
        warmup=cfg.mcmc_warmup, draws=cfg.mcmc_draws, keep=cfg.mcmc_keep, seed=seed
    )


def _spc_reference(X, y, mcmc: McmcConfig) -> ReferenceFit:
    basis = screen_and_spc(X, y, n_components=5, threshold_ratio=0.6)
    return fit_spc_reference(basis, y, mcmc=mcmc)


def _spc_builder(mcmc: McmcConfig):
    # same recipe as _spc_reference, packaged for selectors that refit per fold
    return spc_reference_builder(n_components=5, ratio=0.6, mcmc=mcmc)


def _ols_refit_rmse(d_train: Dataset, X_test, y_test, selected) -> float:
    """Out-of-sample RMSE of a plain least-squares refit on the selection."""
    cols = list(selected)
    ones_tr = np.ones((d_train.n, 1))
    A = np.hstack([ones_tr, d_train.X[:, cols]]) if cols else ones_tr
    beta, *_ = np.linalg.lstsq(A, d_train.y, rcond=None)
    ones_te = np.ones((len(y_test), 1))
    B = np.hstack([ones_te, np.asarray(X_test)[:, cols]]) if cols else ones_te
    return rmse(y_test, B @ beta)


def _selection_metrics(selected, relevant_mask) -> dict:
    out = {"n_selected": len(selected)}
    if relevant_mask is not None:
        out["fdr"] = fdr(selected, relevant_mask)
        try:
            out["sensitivity"] = sensitivity(selected, relevant_mask)
        except UndefinedMetricError:
            pass
        out["n_noisy"] = int(np.sum(~np.asarray(relevant_mask, bool)[list(selected)]))
    return out


class _CellRunner:
    """Executes every configured method on one dataset, recording outcomes."""

    def __init__(self, cfg: ExperimentConfig, scenario: str, replication: int):
        self.cfg = cfg
        self.scenario = scenario
        self.replication = replication
        self.seeds = _cell_seeds(cfg, scenario, replication)
        self.records: list[RunRecord] = []
        self._ref: ReferenceFit | None = None

    def reference(self, d: Dataset) -> ReferenceFit:
        if self._ref is None:
            self._ref = _spc_reference(d.X, d.y, _mcmc(self.cfg, self.seeds[2]))
        return self._ref

    def record(self, base: str, filtered: bool, runner):
        t0 = time.perf_counter()
        try:
            selected, metrics = runner()
            self.records.append(
                RunRecord(
                    scenario=self.scenario,
                    method=base,
                    filtered=filtered,
                    replication=self.replication,
                    seed=self.seeds[0],
                    selected=tuple(int(j) for j in selected),
                    metrics=metrics,
                    wall_time=round(time.perf_counter() - t0, 4),
                )
            )
        except Exception as exc:  # per-cell failures are recorded, not fatal
            log.warning(
                "%s rep %d %s failed: %s",
                self.scenario,
                self.replication,
                method_label(base, filtered),
                exc,
            )
            self.records.append(
                RunRecord(
                    scenario=self.scenario,
                    method=base,
                    filtered=filtered,
                    replication=self.replication,
                    seed=self.seeds[0],
                    selected=(),
                    metrics={},
                    wall_time=round(time.perf_counter() - t0, 4),
                    error=f"{type(exc).__name__}: {exc}",
                )
            )


def _run_sim_cell(cfg: ExperimentConfig, n: int, rho: float, rep: int) -> list[RunRecord]:
    scenario = f"n={n},rho={_fmt_rho(rho)}"
    runner = _CellRunner(cfg, scenario, rep)
    seeds = runner.seeds
    d = gen_latent_regression(GenConfig(n=n, p=cfg.p, k=cfg.k, rho=rho, seed=seeds[0]))
    d_test = gen_latent_regression(
        GenConfig(n=500, p=cfg.p, k=cfg.k, rho=rho, seed=seeds[1])
    )
    problems: dict = {}

    def problem(filtered: bool):
        if filtered not in problems:
            if filtered:
                problems[True] = filter_problem(problem(False), runner.reference(d), d.X)
            else:
                problems[False] = fisher_problem(d.X, d.y)
        return problems[filtered]

    def finish(selected) -> tuple:
        metrics = _selection_metrics(selected, d.relevant)
        metrics["rmse"] = _ols_refit_rmse(d, d_test.X, d_test.y, selected)
        metrics["p"] = d.p
        return selected, metrics

    for spec in cfg.methods:
        base, filt = parse_method(spec)
        if base == "projpred":
            runner.record(
                base,
                filt,
                lambda: finish(
                    projpred_select(
                        d,
                        ProjpredConfig(alpha=cfg.alpha, kfold=cfg.kfold, seed=seeds[3]),
                        _spc_builder(_mcmc(cfg, seeds[2])),
                        ref=runner.reference(d),
                    ).chosen_idx
                ),
            )
        elif base == "steplm":
            runner.record(
                base,
                filt,
                lambda filt=filt: finish(
                    steplm(
                        d,
                        StepConfig(direction="backward", use_reference=filt),
                        ref=runner.reference(d) if filt else None,
                    )
                ),
            )
        elif base == "bayes":
            runner.record(
                base,
                filt,
                lambda filt=filt: finish(
                    bayes_stepwise(
                        d,
                        BayesStepConfig(
                            kfold=5,
                            seed=seeds[3],
                            mcmc=McmcConfig(warmup=200, draws=200, keep=100, seed=seeds[2]),
                        ),
                        ref=runner.reference(d) if filt else None,
                    )
                ),
            )
        elif base == "lasso":
            runner.record(
                base,
                filt,
                lambda filt=filt: finish(
                    lasso_cv(
                        d,
                        K=cfg.kfold,
                        ref=runner.reference(d) if filt else None,
                        seed=seeds[3],
                    ).active
                ),
            )
        elif base in ("locfdr", "ebmed", "ci90"):
            selector = {
                "locfdr": locfdr_select,
                "ebmed": ebayes_median_select,
                "ci90": lambda pr: ci90_select(pr, mcmc=_mcmc(cfg, seeds[2])),
            }[base]
            runner.record(
                base, filt, lambda f=filt, s=selector: finish(s(problem(f)))
            )
        elif base == "iter_projpred":
            runner.record(
                base,
                filt,
                lambda: finish(
                    iterative_projpred(
                        d,
                        IterConfig(
                            alpha=cfg.alpha,
                            max_iters=cfg.max_iters,
                            kfold=cfg.kfold,
                            seed=seeds[3],
                        ),
                        _spc_builder(_mcmc(cfg, seeds[2])),
                        ref=runner.reference(d),
                    ).selected
                ),
            )
        elif base == "iter_lasso":
            runner.record(
                base,
                filt,
                lambda: finish(
                    iterative_lasso(
                        d,
                        IterConfig(
                            max_iters=cfg.max_iters, kfold=cfg.kfold, seed=seeds[3]
                        ),
                    ).selected
                ),
            )
    return runner.records


def _load_bodyfat(cfg: ExperimentConfig, augmented: bool) -> Dataset:
    d = load_csv(cfg.data, target=TARGET_COLUMN)
    if augmented:
        noise_seed = int(seed_sequence(cfg.seed, "bench", "augment").generate_state(1)[0])
        d = augment_with_noise(d, cfg.total_p, seed=noise_seed)
    return d


def _select_minimal(cfg, base, d, ref_builder, fold_seed):
    """One minimal-subset selection on a body-measurement dataset."""
    if base == "projpred":
        res = projpred_select(
            d,
            ProjpredConfig(alpha=cfg.alpha, kfold=cfg.kfold, seed=fold_seed),
            ref_builder,
        )
        return res.chosen_idx
    if base == "steplm":
        return steplm(d, StepConfig(direction="backward"))
    raise ConfigError(f"method {base!r} is not available for this preset")


def _run_bodyfat1_cv_cell(cfg: ExperimentConfig, augmented: bool) -> list[RunRecord]:
    scenario = "cv-aug" if augmented else "cv-base"
    runner = _CellRunner(cfg, scenario, 0)
    seeds = runner.seeds
    d = _load_bodyfat(cfg, augmented)
    relevant = d.relevant if augmented else None
    mcmc = _mcmc(cfg, seeds[2])
    builder = rhs_reference_builder(mcmc=mcmc)
    folds = kfold_splits(d.n, 10, seed=seeds[3])

    ones = np.ones((d.n, 1))
    full_err = np.empty(d.n)
    for train, test in folds:
        A = np.hstack([ones[train], d.X[train]])
        beta, *_ = np.linalg.lstsq(A, d.y[train], rcond=None)
        full_err[test] = d.y[test] - np.hstack([ones[test], d.X[test]]) @ beta
    rmse_full = float(np.sqrt(np.mean(full_err**2)))

    for spec in cfg.methods:
        base, filt = parse_method(spec)

        def run(base=base):
            sel_err = np.empty(d.n)
            sizes, noisy = [], []
            for f, (train, test) in enumerate(folds):
                d_tr = Dataset(X=d.X[train], y=d.y[train])
                sel = _select_minimal(cfg, base, d_tr, builder, seeds[3] + f)
                cols = list(sel)
                A = np.hstack([ones[train], d.X[train][:, cols]]) if cols else ones[train]
                beta, *_ = np.linalg.lstsq(A, d.y[train], rcond=None)
                B = np.hstack([ones[test], d.X[test][:, cols]]) if cols else ones[test]
                sel_err[test] = d.y[test] - B @ beta
                sizes.append(len(sel))
                if relevant is not None:
                    noisy.append(int(np.sum(~relevant[cols])))
            selected = _select_minimal(cfg, base, d, builder, seeds[3])
            metrics = {
                "rmse_full": rmse_full,
                "rmse_selected": float(np.sqrt(np.mean(sel_err**2))),
                "n_selected": len(selected),
                "n_selected_cv_mean": float(np.mean(sizes)),
                "n_selected_cv_sd": float(np.std(sizes, ddof=1)),
                "p": d.p,
            }
            if relevant is not None:
                metrics["n_noisy"] = int(np.sum(~relevant[list(selected)]))
                metrics["n_noisy_cv_mean"] = float(np.mean(noisy))
                metrics["n_noisy_cv_sd"] = float(np.std(noisy, ddof=1))
            return selected, metrics

        runner.record(base, filt, run)
    return runner.records


def _run_bodyfat1_boot_cell(cfg: ExperimentConfig, rep: int) -> list[RunRecord]:
    runner = _CellRunner(cfg, "boot", rep)
    seeds = runner.seeds
    d = _load_bodyfat(cfg, augmented=False)
    train, _ = bootstrap_sample(d, seed=seeds[0])
    builder = rhs_reference_builder(mcmc=_mcmc(cfg, seeds[2]))
    for spec in cfg.methods:
        base, filt = parse_method(spec)

        def run(base=base):
            sel = _select_minimal(cfg, base, train, builder, seeds[3])
            return sel, {"n_selected": len(sel), "p": d.p}

        runner.record(base, filt, run)
    return runner.records


def _run_bodyfat2_cell(cfg: ExperimentConfig, rep: int) -> list[RunRecord]:
    runner = _CellRunner(cfg, "filter", rep)
    seeds = runner.seeds
    d = _load_bodyfat(cfg, augmented=True)
    train, oob = bootstrap_sample(d, seed=seeds[0])
    relevant = train.relevant

    for spec in cfg.methods:
        base, filt = parse_method(spec)
        if base != "steplm":
            raise ConfigError(f"method {base!r} is not available for this preset")

        def run(filt=filt):
            ref = runner.reference(train) if filt else None
            sel = steplm(
                train, StepConfig(direction="backward", use_reference=filt), ref=ref
            )
            metrics = _selection_metrics(sel, relevant)
            if oob.n:
                metrics["rmse_oob"] = _ols_refit_rmse(train, oob.X, oob.y, sel)
            metrics["p"] = train.p
            return sel, metrics

        runner.record(base, filt, run)
    return runner.records


def _run_bodyfat3_cell(cfg: ExperimentConfig, size: int, rep: int) -> list[RunRecord]:
    scenario = f"size={size}"
    runner = _CellRunner(cfg, scenario, rep)
    seeds = runner.seeds
    d = _load_bodyfat(cfg, augmented=True)
    sub = subsample(d, size, seed=seeds[0])
    relevant = sub.relevant
    problems: dict = {}

    def problem(filtered: bool):
        if filtered not in problems:
            if filtered:
                problems[True] = filter_problem(
                    problem(False), runner.reference(sub), sub.X, estimate_sigma=True
                )
            else:
                problems[False] = fisher_problem(sub.X, sub.y, estimate_sigma=True)
        return problems[filtered]

    def finish(selected) -> tuple:
        metrics = _selection_metrics(selected, relevant)
        metrics["p"] = sub.p
        return selected, metrics

    for spec in cfg.methods:
        base, filt = parse_method(spec)
        if base in ("locfdr", "ebmed", "ci90"):
            selector = {
                "locfdr": locfdr_select,
                "ebmed": ebayes_median_select,
                "ci90": lambda pr: ci90_select(pr, mcmc=_mcmc(cfg, seeds[2])),
            }[base]
            runner.record(base, filt, lambda f=filt, s=selector: finish(s(problem(f))))
        elif base == "iter_projpred":
            runner.record(
                base,
                filt,
                lambda: finish(
                    iterative_projpred(
                        sub,
                        IterConfig(
                            alpha=cfg.alpha,
                            max_iters=cfg.max_iters,
                            kfold=cfg.kfold,
                            seed=seeds[3],
                        ),
                        _spc_builder(_mcmc(cfg, seeds[2])),
                        ref=runner.reference(sub),
                    ).selected
                ),
            )
        elif base == "iter_lasso":
            runner.record(
                base,
                filt,
                lambda: finish(
                    iterative_lasso(
                        sub,
                        IterConfig(
                            max_iters=cfg.max_iters, kfold=cfg.kfold, seed=seeds[3]
                        ),
                    ).selected
                ),
            )
        else:
            raise ConfigError(f"method {spec!r} is not available for this preset")
    return runner.records


def _enumerate_cells(cfg: ExperimentConfig) -> list[dict]:
    reps = cfg.effective_replications
    cells: list[dict] = []
    if cfg.preset in ("sim1", "sim2", "custom"):
        for n in cfg.n_grid:
            for rho in cfg.rho_grid:
                for rep in range(reps):
                    cells.append({"kind": "sim", "n": int(n), "rho": float(rho), "rep": rep})
    elif cfg.preset == "bodyfat1":
        cells.append({"kind": "bf1cv", "augmented": False})
        cells.append({"kind": "bf1cv", "augmented": True})
        for rep in range(reps):
            cells.append({"kind": "bf1boot", "rep": rep})
    elif cfg.preset == "bodyfat2":
        for rep in range(reps):
            cells.append({"kind": "bf2", "rep": rep})
    elif cfg.preset == "bodyfat3":
        for size in cfg.n_grid:
            for rep in range(reps):
                cells.append({"kind": "bf3", "size": int(size), "rep": rep})
    return cells


def _cell_key(cfg: ExperimentConfig, cell: dict) -> list[tuple]:
    """Expected record keys for one cell."""
    if cell["kind"] == "sim":
        scenario = f"n={cell['n']},rho={_fmt_rho(cell['rho'])}"
        rep = cell["rep"]
    elif cell["kind"] == "bf1cv":
        scenario = "cv-aug" if cell["augmented"] else "cv-base"
        rep = 0
    elif cell["kind"] == "bf1boot":
        scenario, rep = "boot", cell["rep"]
    elif cell["kind"] == "bf2":
        scenario, rep = "filter", cell["rep"]
    else:
        scenario, rep = f"size={cell['size']}", cell["rep"]
    keys = []
    for spec in cfg.methods:
        base, filt = parse_method(spec)
        keys.append((scenario, base, filt, rep))
    return keys


def _execute_cell(cfg: ExperimentConfig, cell: dict) -> list[RunRecord]:
    kind = cell["kind"]
    if kind == "sim":
        return _run_sim_cell(cfg, cell["n"], cell["rho"], cell["rep"])
    if kind == "bf1cv":
        return _run_bodyfat1_cv_cell(cfg, cell["augmented"])
    if kind == "bf1boot":
        return _run_bodyfat1_boot_cell(cfg, cell["rep"])
    if kind == "bf2":
        return _run_bodyfat2_cell(cfg, cell["rep"])
    if kind == "bf3":
        return _run_bodyfat3_cell(cfg, cell["size"], cell["rep"])
    raise ConfigError(f"unknown cell kind {kind!r}")


def _record_sort_key(r: RunRecord) -> tuple:
    return (r.scenario, r.method, r.filtered, r.replication)


def _read_records(path) -> dict:
    """Parse a records file into {key: record}; later lines supersede earlier.

    A recomputed cell appends fresh records without rewriting the file, so
    the last occurrence of a key is the authoritative one.
    """
    by_key: dict = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rec = RunRecord.from_json(line)
                by_key[rec.key] = rec
    return by_key


def load_records(path) -> list[RunRecord]:
    """Read persisted run records in canonical order."""
    if not pathlib.Path(path).exists():
        raise DataError(f"records file not found: {path}")
    return sorted(_read_records(path).values(), key=_record_sort_key)


def _data_column_names(cfg: ExperimentConfig):
    try:
        d = load_csv(cfg.data, target=TARGET_COLUMN)
    except (DataError, OSError):
        return None
    return d.column_names


def run_experiment(cfg: ExperimentConfig) -> list[RunRecord]:
    """Execute all missing cells, persist records, and write aggregates.

    Completed (scenario, method, replication) records found in the output
    directory are skipped, so an interrupted run resumes where it stopped;
    cells whose records are partial or errored are recomputed. Because every
    value derives from the cell's own seeds, the final aggregate files come
    out byte-identical whether the run was interrupted, resumed, or executed
    in parallel.
    """
    if cfg.preset in ("bodyfat1", "bodyfat2", "bodyfat3"):
        if not pathlib.Path(cfg.data).exists():
            raise DataError(f"data file not found: {cfg.data}")
    out = pathlib.Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    identity = cfg.identity()
    cfg_path = out / "config.json"
    if cfg_path.exists():
        previous = json.loads(cfg_path.read_text(encoding="utf-8"))
        if previous != identity:
            raise ConfigError(
                f"{cfg_path} belongs to a different experiment; "
                "use a fresh output directory"
            )
    else:
        cfg_path.write_text(json.dumps(identity, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    records_path = out / "records.jsonl"
    by_key = _read_records(records_path) if records_path.exists() else {}

    cells = _enumerate_cells(cfg)
    todo = []
    for cell in cells:
        keys = _cell_key(cfg, cell)
        have = all(k in by_key and by_key[k].error is None for k in keys)
        if not have:
            todo.append(cell)
    log.info("%d cells total, %d to compute", len(cells), len(todo))

    def persist(recs: list[RunRecord]):
        with open(records_path, "a", encoding="utf-8") as fh:
            for rec in recs:
                fh.write(rec.to_json() + "\n")
            fh.flush()
        for rec in recs:
            by_key[rec.key] = rec

    if todo:
        if cfg.jobs == 1:
            for cell in todo:
                persist(_execute_cell(cfg, cell))
        else:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                futures = [pool.submit(_execute_cell, cfg, cell) for cell in todo]
                for fut in as_completed(futures):
                    persist(fut.result())

    records = sorted(by_key.values(), key=_record_sort_key)
    _write_summary(records, out / "summary.csv")
    names = _data_column_names(cfg) if cfg.preset.startswith("bodyfat") else None
    for figure in _DEFAULT_FIGURES[cfg.preset]:
        emit_plotdata(records, figure, out, column_names=names)
    return records


def _write_summary(records: Sequence[RunRecord], path):
    """Long-format per-(scenario, method) metric means and SDs."""
    groups: dict = {}
    for rec in records:
        if rec.error is not None:
            continue
        for metric, value in rec.metrics.items():
            if metric == "p":  # bookkeeping for figure tables, not a result
                continue
            groups.setdefault((rec.scenario, rec.label, metric), []).append(float(value))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "method", "metric", "mean", "sd", "n_reps"])
        for (scenario, label, metric), values in sorted(groups.items()):
            arr = np.asarray(values)
            sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            w.writerow([scenario, label, metric, repr(float(arr.mean())), repr(sd), arr.size])


# ---------------------------------------------------------------------------
# figure tables


def _group_records(records: Sequence[RunRecord]):
    groups: dict = {}
    for rec in records:
        if rec.error is None:
            groups.setdefault((rec.scenario, rec.label), []).append(rec)
    return dict(sorted(groups.items()))


def _metric_values(recs: list[RunRecord], name: str) -> np.ndarray:
    return np.asarray([r.metrics[name] for r in recs if name in r.metrics], dtype=float)


def _mean_sd(values: np.ndarray) -> tuple[float, float]:
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return mean, sd


def _selection_matrix(recs: list[RunRecord]) -> SelectionMatrix:
    p = int(recs[0].metrics["p"])
    Z = np.zeros((len(recs), p), dtype=int)
    for i, rec in enumerate(recs):
        Z[i, list(rec.selected)] = 1
    return SelectionMatrix(matrix=Z)


def emit_plotdata(records: Sequence[RunRecord], figure: str, out_dir, column_names=None):
    """Write one figure's tidy CSV; returns the written path.

    ``rmse_vs_fdr`` uses its own axis-specific schema; every other figure
    uses (x, y, group, errorbar_lo, errorbar_hi). Error bars are one
    standard deviation across replications except for ``stability``, whose
    bounds are the estimator's confidence interval.
    """
    if figure not in FIGURES:
        raise ConfigError(f"unknown figure id {figure!r}; known: {', '.join(FIGURES)}")
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{figure}.csv"
    groups = _group_records(records)
    rows: list[list] = []

    if figure == "rmse_vs_fdr":
        header = ["fdr", "rmse", "method", "n", "rho", "se"]
        for (scenario, label), recs in groups.items():
            params = _scenario_params(scenario)
            fdr_vals = _metric_values(recs, "fdr")
            rmse_vals = _metric_values(recs, "rmse")
            if not fdr_vals.size or not rmse_vals.size:
                continue
            rmse_mean, rmse_sd = _mean_sd(rmse_vals)
            rows.append(
                [
                    repr(float(fdr_vals.mean())),
                    repr(rmse_mean),
                    label,
                    params.get("n", ""),
                    params.get("rho", ""),
                    repr(rmse_sd),
                ]
            )
        rows.sort(key=lambda r: (r[2], float(r[3] or 0), float(r[4] or 0)))
    else:
        header = ["x", "y", "group", "errorbar_lo", "errorbar_hi"]
        if figure == "sensitivity_vs_fdr":
            for (scenario, label), recs in groups.items():
                sens = _metric_values(recs, "sensitivity")
                fdr_vals = _metric_values(recs, "fdr")
                if not sens.size or not fdr_vals.size:
                    continue
                y, sd = _mean_sd(sens)
                rows.append(
                    [
                        repr(float(fdr_vals.mean())),
                        repr(y),
                        f"{label} {scenario}",
                        repr(y - sd),
                        repr(y + sd),
                    ]
                )
        elif figure == "entropy":
            for (scenario, label), recs in groups.items():
                if len(recs) < 2 or "p" not in recs[0].metrics:
                    continue
                value = inclusion_entropy(_selection_matrix(recs))
                params = _scenario_params(scenario)
                x = params.get("n", params.get("size", "0"))
                group = label if "rho" not in params else f"{label} rho={params['rho']}"
                rows.append([x, repr(value), group, repr(value), repr(value)])
        elif figure == "stability":
            for (scenario, label), recs in groups.items():
                if len(recs) < 2 or "p" not in recs[0].metrics:
                    continue
                est = stability(_selection_matrix(recs))
                params = _scenario_params(scenario)
                x = params.get("n", params.get("size", "0"))
                group = label if "rho" not in params else f"{label} rho={params['rho']}"
                # raw estimates can dip below 0; displayed values stay in [0, 1]
                lo, mid, hi = (min(1.0, max(0.0, v)) for v in (est.lo, est.estimate, est.hi))
                rows.append([x, repr(mid), group, repr(lo), repr(hi)])
        elif figure == "inclusion":
            for (scenario, label), recs in groups.items():
                if len(recs) < 2 or "p" not in recs[0].metrics:
                    continue
                Z = _selection_matrix(recs).matrix
                freq = Z.mean(axis=0)
                for j in range(Z.shape[1]):
                    if column_names is not None and j < len(column_names):
                        name = column_names[j]
                    else:
                        name = str(j)
                    rows.append(
                        [str(j), repr(float(freq[j])), f"{label}:{name}", "", ""]
                    )
        elif figure == "filter_effect":
            for (scenario, label), recs in groups.items():
                for metric in ("n_noisy", "rmse_oob"):
                    values = _metric_values(recs, metric)
                    if not values.size:
                        continue
                    y, sd = _mean_sd(values)
                    rows.append(
                        [label, repr(y), metric, repr(y - sd), repr(y + sd)]
                    )
        rows.sort(key=lambda r: (r[2], r[0]))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path
