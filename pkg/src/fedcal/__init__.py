"""fedcal: desk-scale federated learning with calibration diagnostics.

Small dense classifiers trained under FedAvg/FedProx on synthetic or
CIFAR-10 data, with reliability metrics (federated ECE, NLL, predictive
entropy) and a cheap head-ensemble remedy for the miscalibration that
heterogeneous client data induces.
"""

__version__ = "0.1.0"

from ._kernels import backend_name
from .rng import named_rng
from .data import (
    Dataset,
    PartitionPlan,
    gen_ood,
    gen_synthetic,
    load_cifar10_binary,
    make_partitions,
    save_cifar10_binary,
)
from .nn import Batch, ModelParams, ModelSpec
from .fed import (
    FedConfig,
    FederationResult,
    head_finetune_diagnostic,
    run_federation,
    split_clients,
)
from .metrics import (
    PredictionSet,
    accuracy,
    calibration_report,
    f_ece,
    nll,
    predictive_entropy,
)
from .aph import (
    APHConfig,
    CostModel,
    HeadEnsemble,
    build_ensemble,
    cost_fraction,
    predict_ensemble,
)
from .config import ExperimentConfig, default_config, load_config

__all__ = [
    "APHConfig",
    "Batch",
    "CostModel",
    "Dataset",
    "ExperimentConfig",
    "FedConfig",
    "FederationResult",
    "HeadEnsemble",
    "ModelParams",
    "ModelSpec",
    "PartitionPlan",
    "PredictionSet",
    "__version__",
    "accuracy",
    "backend_name",
    "build_ensemble",
    "calibration_report",
    "cost_fraction",
    "default_config",
    "f_ece",
    "gen_ood",
    "gen_synthetic",
    "head_finetune_diagnostic",
    "load_cifar10_binary",
    "load_config",
    "make_partitions",
    "named_rng",
    "nll",
    "predict_ensemble",
    "predictive_entropy",
    "run_federation",
    "save_cifar10_binary",
    "split_clients",
]
