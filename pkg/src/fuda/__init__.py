"""One-shot federated unsupervised domain adaptation on feature-space data.

Per-client source classifiers are trained locally, uploaded once, and
aggregated into a global model with entropy-based attention weights; the
global model is then refined on the unlabeled target domain with pseudo
labels distilled from all source models.
"""

from .aggregation import (
    AGGREGATORS,
    AggregationWeights,
    EntropyStats,
    aggregate,
    compute_weights,
    mean_entropy,
    prediction_entropy,
)
from .data import (
    DomainDataset,
    SyntheticShiftConfig,
    generate_domains,
    load_feature_file,
    save_feature_file,
    split,
)
from .errors import (
    DimensionError,
    FeatureFileError,
    NumericError,
    ProtocolError,
    ValidationError,
)
from .federation import ClientState, OneShotResult, ProtocolTrace, ServerState, run_one_shot, train_client
from .harness import (
    ExperimentConfig,
    FeatureFilePlan,
    accuracy,
    entropy_accuracy_correlation,
    run_ablation,
    run_aggregator_comparison,
    run_epsilon_sweep,
    run_experiment,
    standard_benchmark,
)
from .mspl import (
    MSPLConfig,
    PseudoLabelSet,
    adapt_global,
    entropy_increase_of_smoothing,
    generate_pseudo_labels,
    smooth_labels,
)
from .nn import (
    ArchitectureSpec,
    LossSpec,
    ModelParams,
    TrainConfig,
    check_gradients,
    forward,
    init_params,
    loss_and_grad,
    lr_at_step,
    sgd_step,
    softmax,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AGGREGATORS",
    "AggregationWeights",
    "ArchitectureSpec",
    "ClientState",
    "DimensionError",
    "DomainDataset",
    "EntropyStats",
    "ExperimentConfig",
    "FeatureFileError",
    "FeatureFilePlan",
    "LossSpec",
    "MSPLConfig",
    "ModelParams",
    "NumericError",
    "OneShotResult",
    "ProtocolError",
    "ProtocolTrace",
    "PseudoLabelSet",
    "ServerState",
    "SyntheticShiftConfig",
    "TrainConfig",
    "ValidationError",
    "accuracy",
    "adapt_global",
    "aggregate",
    "check_gradients",
    "compute_weights",
    "entropy_accuracy_correlation",
    "entropy_increase_of_smoothing",
    "forward",
    "generate_domains",
    "generate_pseudo_labels",
    "init_params",
    "load_feature_file",
    "loss_and_grad",
    "lr_at_step",
    "mean_entropy",
    "prediction_entropy",
    "run_ablation",
    "run_aggregator_comparison",
    "run_epsilon_sweep",
    "run_experiment",
    "run_one_shot",
    "save_feature_file",
    "sgd_step",
    "smooth_labels",
    "softmax",
    "split",
    "standard_benchmark",
    "train",
    "train_client",
]
