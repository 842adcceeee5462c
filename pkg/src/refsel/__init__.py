"""Variable selection with reference models.

A numpy/scipy toolkit for selecting predictive variables by filtering data
through a reference model: projection predictive minimal-subset selection,
iterated projections for complete selection, classical selectors (stepwise
AIC, Bayesian stepwise, lasso) with and without reference filtering,
normal-means selectors on Fisher-transformed correlations, selection-quality
metrics, and a benchmark harness with named presets.
"""

from .errors import (
    ConfigError,
    DataError,
    EstimationError,
    RefselError,
    SamplerError,
    UndefinedMetricError,
)
from .datagen import (
    Dataset,
    GenConfig,
    augment_with_noise,
    bootstrap_sample,
    gen_latent_regression,
    load_csv,
    subsample,
)
from .refmodel import (
    McmcConfig,
    PriorConfig,
    ReferenceFit,
    SPCBasis,
    StandardizedBasis,
    coefficients_original_scale,
    export_draws_csv,
    fit_rhs_regression,
    fit_spc_reference,
    mixture_lpd,
    predictive_mean_draws,
    predictive_means,
    screen_and_spc,
)
from .projpred import (
    ProjpredConfig,
    SelectionResult,
    SizeDecision,
    SubmodelProjection,
    UtilityPath,
    estimate_utility_kfold,
    estimate_utility_loo,
    forward_search,
    kfold_splits,
    project_draw,
    project_draws,
    projpred_select,
    rhs_reference_builder,
    select_size,
    spc_reference_builder,
    write_selection_csv,
)
from .baselines import (
    BayesStepConfig,
    LassoFit,
    StepConfig,
    aic,
    bayes_pvalue,
    bayes_stepwise,
    lasso_cv,
    ols_fit,
    steplm,
    write_selected_sets_csv,
)
from .iterative import (
    IterConfig,
    IterState,
    IterationRecord,
    iterative_lasso,
    iterative_projpred,
    write_iteration_csv,
)
from .normalmeans import (
    LocfdrModel,
    NormalMeansProblem,
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
from .bench import (
    ExperimentConfig,
    RunRecord,
    emit_plotdata,
    load_records,
    run_experiment,
    validate_config,
)
from .metrics import (
    SelectionMatrix,
    StabilityResult,
    fdr,
    inclusion_entropy,
    rmse,
    sensitivity,
    stability,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "EstimationError",
    "RefselError",
    "SamplerError",
    "UndefinedMetricError",
    "Dataset",
    "GenConfig",
    "augment_with_noise",
    "bootstrap_sample",
    "gen_latent_regression",
    "load_csv",
    "subsample",
    "McmcConfig",
    "PriorConfig",
    "ReferenceFit",
    "SPCBasis",
    "StandardizedBasis",
    "coefficients_original_scale",
    "export_draws_csv",
    "fit_rhs_regression",
    "fit_spc_reference",
    "mixture_lpd",
    "predictive_mean_draws",
    "predictive_means",
    "screen_and_spc",
    "ProjpredConfig",
    "SelectionResult",
    "SizeDecision",
    "SubmodelProjection",
    "UtilityPath",
    "estimate_utility_kfold",
    "estimate_utility_loo",
    "forward_search",
    "kfold_splits",
    "project_draw",
    "project_draws",
    "projpred_select",
    "rhs_reference_builder",
    "select_size",
    "spc_reference_builder",
    "write_selection_csv",
    "BayesStepConfig",
    "LassoFit",
    "StepConfig",
    "aic",
    "bayes_pvalue",
    "bayes_stepwise",
    "lasso_cv",
    "ols_fit",
    "steplm",
    "write_selected_sets_csv",
    "IterConfig",
    "IterState",
    "IterationRecord",
    "iterative_lasso",
    "iterative_projpred",
    "write_iteration_csv",
    "LocfdrModel",
    "NormalMeansProblem",
    "ci90_select",
    "ebayes_median_select",
    "filter_problem",
    "fisher_problem",
    "fit_locfdr",
    "fit_spike_laplace",
    "laplace_posterior_median",
    "locfdr_select",
    "write_normal_means_csv",
    "ExperimentConfig",
    "RunRecord",
    "emit_plotdata",
    "load_records",
    "run_experiment",
    "validate_config",
    "SelectionMatrix",
    "StabilityResult",
    "fdr",
    "inclusion_entropy",
    "rmse",
    "sensitivity",
    "stability",
    "__version__",
]
