"""Bayesian regression discontinuity analysis with an unknown cutoff."""

__version__ = "0.1.0"

from .data import (
    BinnedSeries,
    DataError,
    Dataset,
    OutcomeKind,
    ScoreKind,
    ScoreScale,
    OutcomeScale,
    SupportBounds,
    bin_series,
    compute_support_bounds,
    normalize,
    read_csv,
    trim,
)
from .treatment import (
    CutoffPrior,
    TreatmentParams,
    TreatmentPriorSpec,
    coefficient_bounds,
    log_lik_treatment,
    log_prior_treatment,
    sample_treatment_params,
    treatment_prob,
)
from .outcome import (
    BoundedOutcomeSpec,
    OutcomeParamsBinary,
    OutcomeParamsContinuous,
    binary_tilde_transform,
    log_lik_outcome,
    log_prior_outcome_binary,
    log_prior_outcome_continuous,
    outcome_mean,
    outcome_mean_binary,
    outcome_sd,
)
from .mcmc import (
    PosteriorDraws,
    SamplerConfig,
    cut_run,
    grid_oracle_posterior,
    init_chains,
    log_posterior,
    run,
    two_constant_posterior,
)
from .diagnostics import Diagnostics, effective_sample_size, split_rhat
from .analysis import (
    EstimateReport,
    FunctionBand,
    function_band,
    hdi,
    joint_c_tau,
    map_estimate,
    summarize,
    tau_per_draw,
)
from .baselines import LLRConfig, LLREstimate, llr_fit, plugin_estimate, rule_of_thumb_bandwidth
from .simulate import MetricsTable, ScenarioSpec, gen_dataset, run_scenario, true_estimands

__all__ = [name for name in dir() if not name.startswith("_")]
