"""Stress-tilted mirror descent on the simplex, with drift environments,
robustness metrics, a gossip simulator, and a seeded experiment harness."""

from .geometry import (
    DualVector,
    SimplexPoint,
    kl_divergence,
    neg_entropy,
    pinsker_bound,
    project_simplex,
    project_simplex_mahalanobis,
    tv_distance,
)
from .drift import (
    CalibrationFit,
    GaussianParams,
    calibration_fit,
    gaussian_kl,
    gaussian_kl_general,
    kl_path_length,
    lambda_schedule,
    plugin_drift_estimate,
)
from .learners import (
    LearnerConfig,
    LearnerState,
    MasterState,
    bandit_tdmd_step,
    default_eta,
    fixed_share_step,
    hedge_master_step,
    init_state,
    make_lambda_grid,
    master_prediction,
    sample_arm,
    tdmd_step,
    tdons_step,
    tilted_posterior_step,
)
from .environments import (
    EnvironmentSpec,
    RoundData,
    Trace,
    export_trace_csv,
    generate,
    import_trace_csv,
    make_two_expert_spec,
    outlier_injection,
    switch_intensity_family,
)
from .metrics import (
    FiniteDistribution,
    FragilityIndexResult,
    RegretReport,
    RunRecord,
    SensitivityReport,
    belief_bandwidth,
    dynamic_regret,
    fragility,
    fragility_index,
    per_switch_tails,
    sensitivity_mc,
    trimmed_regret,
    worst_case_tilt,
)
from .distributed import (
    AgentState,
    MixingMatrix,
    build_mixing_matrix,
    consensus_contraction_trace,
    consensus_error,
    gossip_tdmd_run,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    demo_two_expert,
    load_experiment,
    load_experiment_file,
    parse_config,
    run_experiment,
    run_hedge_on_trace,
    run_on_trace,
    serialize_config,
    sweep,
)
from .seeding import fnv1a64, generator, split_seed

__version__ = "0.1.0"
