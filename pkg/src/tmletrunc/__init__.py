"""Targeted minimum loss estimation of average treatment effects for
continuous outcomes under practical positivity violations.

The package provides: a simulation data generator with controllable overlap
and outcome-model misspecification; logistic-propensity and linear-outcome
nuisance fitting with outcome scaling; sample-size-driven propensity
truncation; four targeting strategies (clever-covariate-scaled or
loss-weighted fluctuation, logistic or linear link); efficient-influence-
function, plug-in, and targeted-bootstrap variance estimators with Wald and
percentile intervals; an adaptive truncation-level selector (a Lepski-style
walk with an envelope brake); and a Monte Carlo study harness with a CLI.
"""

__version__ = "0.1.0"

from .adaptive import (
    BrakeEnvelope,
    SelectionResult,
    Selector,
    StopReason,
    TruncationPath,
    build_envelope,
    lepski_move_allowed,
    select_truncation,
)
from .datagen import (
    Dataset,
    DegenerateArmsError,
    Misspec,
    Scenario,
    derive_key,
    dump_dataset,
    gen_covariates,
    gen_dataset,
    load_dataset,
    stream,
    true_ate,
    true_outcome_mean,
    true_propensity,
)
from .harness import (
    INIT_METHOD,
    MetricsRow,
    ReplicationRecord,
    StudyConfig,
    StudyResult,
    SummaryRow,
    VarianceTableRow,
    aggregate,
    read_records_csv,
    run_replication,
    run_study,
    summarize_across_scenarios,
    variance_table,
    write_records_csv,
)
from .nuisance import (
    NuisanceFits,
    OutcomeFit,
    OutcomeScaling,
    PropensityFit,
    RankDeficiencyError,
    ResidualVarianceFit,
    fit_logistic,
    fit_nuisances,
    fit_ols,
    fit_outcome,
    fit_residual_variance,
    scale_outcome,
)
from .targeting import (
    FluctuationResult,
    Link,
    Strategy,
    TmleFit,
    initial_psi,
    predict_counterfactual,
    tmle_fit,
)
from .truncation import TruncatedPropensity, TruncationSpec, apply_truncation, trunc_bound
from .variance import (
    ConfidenceInterval,
    VarianceEstimate,
    VarianceMethod,
    percentile_ci,
    var_eif,
    var_plugin,
    var_targeted_bootstrap,
    wald_ci,
)

__all__ = [
    "__version__",
    # datagen
    "Misspec",
    "Scenario",
    "Dataset",
    "DegenerateArmsError",
    "gen_covariates",
    "gen_dataset",
    "true_propensity",
    "true_outcome_mean",
    "true_ate",
    "derive_key",
    "stream",
    "dump_dataset",
    "load_dataset",
    # nuisance
    "PropensityFit",
    "OutcomeFit",
    "OutcomeScaling",
    "ResidualVarianceFit",
    "NuisanceFits",
    "RankDeficiencyError",
    "fit_logistic",
    "fit_ols",
    "fit_outcome",
    "scale_outcome",
    "fit_residual_variance",
    "fit_nuisances",
    # truncation
    "TruncationSpec",
    "TruncatedPropensity",
    "trunc_bound",
    "apply_truncation",
    # targeting
    "Strategy",
    "Link",
    "FluctuationResult",
    "TmleFit",
    "tmle_fit",
    "predict_counterfactual",
    "initial_psi",
    # variance
    "VarianceMethod",
    "VarianceEstimate",
    "ConfidenceInterval",
    "var_eif",
    "var_plugin",
    "var_targeted_bootstrap",
    "wald_ci",
    "percentile_ci",
    # adaptive
    "Selector",
    "StopReason",
    "TruncationPath",
    "BrakeEnvelope",
    "SelectionResult",
    "lepski_move_allowed",
    "build_envelope",
    "select_truncation",
    # harness
    "StudyConfig",
    "ReplicationRecord",
    "MetricsRow",
    "SummaryRow",
    "VarianceTableRow",
    "StudyResult",
    "run_replication",
    "run_study",
    "aggregate",
    "summarize_across_scenarios",
    "variance_table",
    "read_records_csv",
    "write_records_csv",
    "INIT_METHOD",
]
