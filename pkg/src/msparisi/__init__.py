"""Numerical toolkit for the multiscale Sherrington-Kirkpatrick model:
Parisi functional evaluation and minimization, order-parameter measures with
synchronized couplings, phase classification, and finite-N Monte Carlo."""

from .model import (
    FieldLaw,
    ModelParams,
    ValidationReport,
    annealed_region,
    annealed_value,
    lowtemp_lhs,
    validate_model,
)
from .measures import (
    DiscreteMeasure,
    InvariantViolation,
    ParisiPair,
    SyncCoupling,
    conditional_moment,
    gap_delta,
    measure_to_pair,
    pair_to_measure,
    quantile,
    quantile_right_limit,
    sync_coupling,
    wasserstein1,
)
from .parisi import (
    AccuracyError,
    DensityFlow,
    GridFunction,
    NotStationaryError,
    NumericsConfig,
    consistency_values,
    effective_gammas,
    evaluate,
    evaluate_measure,
    evaluate_oracle,
    forward_densities,
    grad_gamma,
    grad_x,
    rs_profile,
    stationarity_residual,
)
from .optimizer import (
    OptimReport,
    PhaseLabel,
    PlateauCheck,
    annealed_curvature,
    build_xi,
    classify_phase,
    optimize_model,
    optimize_x,
    plateau_bound_check,
    refine_k,
)
from .finiten import (
    DisorderSample,
    SimEstimate,
    draw_disorder,
    exact_partition,
    fully_annealed_pressure,
    nested_pressure,
    overlap_moment_sim,
    overlap_msq_exact,
)

__version__ = "0.1.0"
