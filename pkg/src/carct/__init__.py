"""Covariate-adaptive randomization: simulation, inference, and exact oracles."""

__version__ = "0.1.0"

from .errors import (BudgetExceededError, CarctError, ConfigError,
                     DegenerateDesignError, NumericalError)
from .covariates import (CovariateSpec, PatientProfile, StratumIndex,
                         covariate_moments, sample_profile, stratum_dims,
                         stratum_probabilities)
from .imbalance import (ImbalanceState, WeightConfig, imbalance_measure,
                        lambda_at, v_statistic)
from .procedures import (AllocationFunction, AllocationReport, ProcedureConfig,
                         assign, assignment_probability, sqrt_tail,
                         validate_allocation_function)
from .inference import (OLSFit, PowerResult, ResponseModel, TestSpec, TrialData,
                        conditional_power, ell_n_from_state, ell_n_from_trial,
                        generate_responses, log_noncentral_t_cdf,
                        loss_of_power_ratio, noncentral_f_cdf,
                        noncentral_t_cdf, ols_fit, t_quantile, t_statistic)
from .selection_bias import GuessTally, Guesser, SBEstimate, guess, sb_estimate
from .oracle import (ExactDistribution, StationaryResult, chain_stationary,
                     enumerate_exact)
from .simulator import (CellConfig, CellStats, ExperimentConfig,
                        ExperimentSummary, MetricStat, RateEstimate,
                        TrialResult, rate_estimate, run_experiment, run_trial)
from .reports import (ReportBundle, config_from_dict, config_from_manifest,
                      config_to_dict, emit_report, summary_to_dict)
from .config import load_toml, parse_covariate, parse_experiment, parse_procedure

__all__ = [
    "__version__",
    "BudgetExceededError", "CarctError", "ConfigError",
    "DegenerateDesignError", "NumericalError",
    "CovariateSpec", "PatientProfile", "StratumIndex", "covariate_moments",
    "sample_profile", "stratum_dims", "stratum_probabilities",
    "ImbalanceState", "WeightConfig", "imbalance_measure", "lambda_at",
    "v_statistic",
    "AllocationFunction", "AllocationReport", "ProcedureConfig", "assign",
    "assignment_probability", "sqrt_tail", "validate_allocation_function",
    "OLSFit", "PowerResult", "ResponseModel", "TestSpec", "TrialData",
    "conditional_power", "ell_n_from_state", "ell_n_from_trial",
    "generate_responses", "log_noncentral_t_cdf", "loss_of_power_ratio",
    "noncentral_f_cdf", "noncentral_t_cdf", "ols_fit", "t_quantile",
    "t_statistic",
    "GuessTally", "Guesser", "SBEstimate", "guess", "sb_estimate",
    "ExactDistribution", "StationaryResult", "chain_stationary",
    "enumerate_exact",
    "CellConfig", "CellStats", "ExperimentConfig", "ExperimentSummary",
    "MetricStat", "RateEstimate", "TrialResult", "rate_estimate",
    "run_experiment", "run_trial",
    "ReportBundle", "config_from_dict", "config_from_manifest",
    "config_to_dict", "emit_report", "summary_to_dict",
    "load_toml", "parse_covariate", "parse_experiment", "parse_procedure",
]
