"""Toolkit for confidence-routed model cascades on a toy numpy stack.

The pieces compose in pipeline order: logit tables (data), confidence
scoring and calibration (confidence), threshold sweeps and routing
(cascade), the routing-aware training loss (loss), small dense nets and
their trainer (nets, training), synthetic blob data (synthetic), and the
packaged benchmark (experiment). Figure rendering lives in plots and is
imported lazily so matplotlib loads only when a report is drawn.
"""

from cascadekit.cascade import (
    MultistageSelection,
    RoutingResult,
    Selection,
    SweepCurve,
    cascade_accuracy,
    cascade_macs,
    n_expensive,
    route_multistage,
    search_multistage_thresholds,
    select_threshold,
    stage_exit_costs,
    sweep_thresholds,
)
from cascadekit.confidence import (
    apply_temperature,
    confidences,
    ece,
    fit_temperature,
    max_prob,
    neg_entropy,
    nll,
    score,
    softmax,
)
from cascadekit.data import (
    POLICIES,
    SCORING_METHODS,
    CascadeSpec,
    LogitTable,
    ModelProfile,
    StageSpec,
    join_tables,
    load_cascade_config,
    load_logit_table,
    validate_spec,
    write_logit_table,
)
from cascadekit.errors import (
    CascadeKitError,
    ConfigError,
    CostSignWarning,
    FormatError,
    JoinError,
)
from cascadekit.experiment import (
    ExperimentConfig,
    ExperimentReport,
    MethodSpec,
    default_benchmark_config,
    load_experiment_config,
    parse_experiment_config,
    render_dir,
    run_experiment,
    summarize,
    write_report,
)
from cascadekit.loss import (
    CorrectnessPair,
    LossBreakdown,
    TrainStep,
    cascade_loss_batch,
    cascade_loss_grad_conf,
    cascade_loss_sample,
    cascading_schedule,
    grad_wrt_logits,
    joint_loss,
    splitting_loss,
)
from cascadekit.nets import (
    ToyNet,
    count_macs,
    exit_macs,
    forward,
    load_net,
    make_mlp,
    make_multi_exit,
    save_net,
)
from cascadekit.synthetic import (
    FeatureTable,
    SyntheticData,
    SyntheticSpec,
    gen_synthetic,
    load_features,
    write_features,
)
from cascadekit.training import (
    CorrectnessCache,
    EpochStats,
    LossSpec,
    TrainConfig,
    accuracy,
    learning_rate,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "CascadeKitError",
    "ConfigError",
    "CostSignWarning",
    "FormatError",
    "JoinError",
    "LogitTable",
    "ModelProfile",
    "StageSpec",
    "CascadeSpec",
    "SCORING_METHODS",
    "POLICIES",
    "load_logit_table",
    "write_logit_table",
    "join_tables",
    "validate_spec",
    "load_cascade_config",
    "softmax",
    "max_prob",
    "neg_entropy",
    "score",
    "confidences",
    "nll",
    "fit_temperature",
    "apply_temperature",
    "ece",
    "n_expensive",
    "cascade_accuracy",
    "cascade_macs",
    "stage_exit_costs",
    "SweepCurve",
    "sweep_thresholds",
    "Selection",
    "select_threshold",
    "RoutingResult",
    "route_multistage",
    "MultistageSelection",
    "search_multistage_thresholds",
    "CorrectnessPair",
    "LossBreakdown",
    "cascade_loss_sample",
    "cascade_loss_batch",
    "cascade_loss_grad_conf",
    "grad_wrt_logits",
    "joint_loss",
    "TrainStep",
    "cascading_schedule",
    "splitting_loss",
    "ToyNet",
    "make_mlp",
    "make_multi_exit",
    "forward",
    "exit_macs",
    "count_macs",
    "save_net",
    "load_net",
    "FeatureTable",
    "SyntheticData",
    "SyntheticSpec",
    "gen_synthetic",
    "write_features",
    "load_features",
    "LossSpec",
    "TrainConfig",
    "EpochStats",
    "learning_rate",
    "train",
    "accuracy",
    "CorrectnessCache",
    "MethodSpec",
    "ExperimentConfig",
    "ExperimentReport",
    "parse_experiment_config",
    "load_experiment_config",
    "default_benchmark_config",
    "run_experiment",
    "summarize",
    "write_report",
    "render_dir",
    "__version__",
]
