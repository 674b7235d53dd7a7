"""Federated training simulation: data, local training, round pipelines."""

from .data import (
    Dataset,
    IdxCountMismatchError,
    IdxFormatError,
    IdxMagicError,
    IdxTruncatedError,
    generate_synthetic,
    load_idx,
    merge_idx,
)
from .rounds import (
    CryptoContext,
    ExperimentConfig,
    RoundRecord,
    calibrate_norm_bound,
    make_shards,
    metrics_csv_rows,
    run_experiment,
    run_round,
    subseed,
)
from .training import (
    AttackConfig,
    LocalModel,
    Shard,
    accuracy,
    attack_success_rate,
    flip_labels,
    local_train,
    loss_and_grad,
    mean_loss,
    model_dim,
    predict,
)

__all__ = [
    "Dataset",
    "IdxFormatError",
    "IdxMagicError",
    "IdxCountMismatchError",
    "IdxTruncatedError",
    "generate_synthetic",
    "load_idx",
    "merge_idx",
    "AttackConfig",
    "LocalModel",
    "Shard",
    "model_dim",
    "predict",
    "accuracy",
    "mean_loss",
    "loss_and_grad",
    "local_train",
    "flip_labels",
    "attack_success_rate",
    "ExperimentConfig",
    "RoundRecord",
    "CryptoContext",
    "subseed",
    "make_shards",
    "run_round",
    "calibrate_norm_bound",
    "run_experiment",
    "metrics_csv_rows",
]
