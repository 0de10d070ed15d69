"""Censoring-aware adaptive experimentation for discrete-time survival outcomes.

A numpy/scipy library for running and analyzing sequential experiments
whose outcomes are right-censored event times: exact survival algebra
and influence-function pseudo-outcomes, closed-form variance-targeted
treatment allocation with truncation, sequential cross-fitted nuisance
estimation, anytime-valid inference, and a reproducible experiment
harness with a small CLI.
"""

from .allocation import (
    GridDesign,
    PolicyEvaluation,
    TruncationSchedule,
    a_optimal_policy,
    a_optimal_prob,
    censoring_ratio_closed_form,
    d_optimal_policy,
    e_optimal_policy,
    neyman_naive_target,
    sigma_eff,
    truncate,
    variance_target,
)
from .core import (
    PAST_HORIZON,
    HazardPair,
    NuisanceAtArm,
    Observation,
    OutcomeAtom,
    OverlapError,
    TieConvention,
    apo_pseudo_outcome,
    censoring_survival,
    eif_pseudo_outcome,
    event_survival,
    ipcw_score,
    outcome_atoms,
    survival_path,
)
from .dgp import (
    GroundTruth,
    SyntheticDgp,
    SyntheticDgpParams,
    TwinsDgp,
    TwinsDgpParams,
    calibrate_intercepts,
    compute_ground_truth,
    default_synthetic_dgp,
    sample_outcome,
    score_covariance,
    true_tau,
)
from .estimator import (
    AseState,
    BatchConfig,
    ConfidenceOutput,
    apo_curve_estimate,
    ase_update,
    asymp_cs,
    fixed_time_ci,
    optimal_cs_rho,
    plugin_estimate,
    variance_estimate,
)
from .harness import (
    ExperimentConfig,
    SummaryMetrics,
    config_from_dict,
    default_synthetic_config,
    default_twins_config,
    load_config,
    reproduce_figures,
    run_many,
    run_single,
    simulate,
)
from .learners import CrossFitState, FittedNuisance, HazardLearnerSpec, fit_hazards

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
