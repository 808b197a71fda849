"""Monte Carlo benchmark for pulsed two-photon interference at a fiber
beam splitter, with the analytic noise budget and CAR models it is
validated against."""

from ._version import __version__
from .analytics import (
    CalibrationError,
    DipModelParams,
    NoAccidentalsError,
    VisibilityBudget,
    amplitude_overlap,
    budget_from_config,
    calibrate_eta,
    car_peak_pair_rate,
    car_prediction,
    dip_model,
    indistinguishability,
    invert_car,
    splitter_dip_factor,
    visibility_from_counts,
    visibility_prediction,
)
from .configio import (
    config_from_dict,
    config_to_schema_dict,
    default_config,
    default_eta,
    dump_config,
    load_config,
)
from .fitting import (
    FitResult,
    LMControls,
    LMResult,
    finite_difference_jacobian,
    fit_dip,
    levenberg_marquardt,
)
from .fock import (
    CapacityError,
    click_pattern_probs,
    clicks_from_occupation,
    coincidence_prob,
    evolve_fock,
    evolve_fock_ladder,
    permanent,
    splitter_unitary,
    temporal_decompose,
)
from .model import (
    BeamSplitter,
    ConfigError,
    DetectorParams,
    ExperimentConfig,
    OpticalChannel,
    SourceParams,
    TimingConfig,
    WavepacketShape,
    config_errors,
    dark_prob_per_window,
    db_to_linear,
    fwhm_to_sigma,
    linear_to_db,
    validate,
)
from .simulate import (
    CarResult,
    GateRecord,
    InsufficientStatisticsError,
    ScanPoint,
    SweepRow,
    folded_poisson,
    gate_pattern_distribution,
    run_car,
    run_dip_scan,
    run_visibility_sweep,
    sample_pair_count,
    simulate_gate,
    thread_cap,
)

__all__ = [
    "__version__",
    "BeamSplitter",
    "CalibrationError",
    "CapacityError",
    "CarResult",
    "ConfigError",
    "DetectorParams",
    "DipModelParams",
    "ExperimentConfig",
    "FitResult",
    "GateRecord",
    "InsufficientStatisticsError",
    "LMControls",
    "LMResult",
    "NoAccidentalsError",
    "OpticalChannel",
    "ScanPoint",
    "SourceParams",
    "SweepRow",
    "TimingConfig",
    "VisibilityBudget",
    "WavepacketShape",
    "amplitude_overlap",
    "budget_from_config",
    "calibrate_eta",
    "car_peak_pair_rate",
    "car_prediction",
    "click_pattern_probs",
    "clicks_from_occupation",
    "coincidence_prob",
    "config_errors",
    "config_from_dict",
    "config_to_schema_dict",
    "dark_prob_per_window",
    "db_to_linear",
    "default_config",
    "default_eta",
    "dip_model",
    "dump_config",
    "evolve_fock",
    "evolve_fock_ladder",
    "finite_difference_jacobian",
    "fit_dip",
    "folded_poisson",
    "fwhm_to_sigma",
    "gate_pattern_distribution",
    "indistinguishability",
    "invert_car",
    "levenberg_marquardt",
    "linear_to_db",
    "load_config",
    "permanent",
    "run_car",
    "run_dip_scan",
    "run_visibility_sweep",
    "sample_pair_count",
    "simulate_gate",
    "splitter_dip_factor",
    "splitter_unitary",
    "temporal_decompose",
    "thread_cap",
    "validate",
    "visibility_from_counts",
    "visibility_prediction",
]
