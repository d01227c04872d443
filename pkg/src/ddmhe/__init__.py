"""Data-driven moving horizon estimation for linear systems.

The estimator is learned from offline input/output segments with one noisy
state sample per segment. A model-based MHE baseline, finite-sample bound
calculators and a Monte Carlo harness are included.
"""

from ddmhe.errors import (
    AssumptionViolation,
    BoundsError,
    DdmheError,
    DegeneracyError,
    DomainError,
    IntegrityError,
    InvalidInputError,
    ParseError,
    StateError,
)
from ddmhe.lti import (
    LtiSystem,
    NoiseSpec,
    StackedOperators,
    Trajectory,
    build_stacked_operators,
    check_observability,
    horizon_output,
    sample_noise,
    simulate,
)
from ddmhe.offline import (
    OfflineDataset,
    check_persistent_excitation,
    collect_offline,
    load_dataset,
    save_dataset,
    segment_view,
)
from ddmhe.estimators import (
    DdmheParams,
    EstimatorState,
    MbmheParams,
    ddmhe_step,
    fit_ddmhe,
    fit_mbmhe,
    mbmhe_step,
    oracle_online_solve,
    run_estimation,
)

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolation",
    "BoundsError",
    "DdmheError",
    "DdmheParams",
    "DegeneracyError",
    "DomainError",
    "EstimatorState",
    "IntegrityError",
    "InvalidInputError",
    "LtiSystem",
    "MbmheParams",
    "NoiseSpec",
    "OfflineDataset",
    "ParseError",
    "StackedOperators",
    "StateError",
    "Trajectory",
    "build_stacked_operators",
    "check_observability",
    "check_persistent_excitation",
    "collect_offline",
    "ddmhe_step",
    "fit_ddmhe",
    "fit_mbmhe",
    "horizon_output",
    "load_dataset",
    "mbmhe_step",
    "oracle_online_solve",
    "run_estimation",
    "sample_noise",
    "save_dataset",
    "segment_view",
    "simulate",
]
