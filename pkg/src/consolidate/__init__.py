"""Continual-learning trainer: sequential MNIST under SGD, L2 anchoring,
and elastic weight consolidation, with a CLI and replication presets."""

__version__ = "0.1.0"

from .consolidation import (Anchor, ConsolidationState, FisherDiagonal,
                            fisher_diagonal, penalty_value_and_grad,
                            register_completed_task, snapshot_anchor)
from .dataset import (DataSplit, LabeledDataset, TaskSpec, apply_task,
                      batches, fetch_mnist, load_mnist, make_mixed_sequence,
                      make_permuted_sequence, make_rotated_sequence,
                      parse_idx, split_train_validation)
from .network import (ForwardCache, ModelParams, NetConfig, accuracy,
                      backward, cross_entropy_loss, forward, init_params)
from .runner import (ExperimentPlan, HyperGrid, MetricsLog, RegimeSpec,
                     build_preset, grid_search, run_sequence,
                     single_task_reference, summarize)
from .training import (EpochRecord, EvalContext, OptimizerState, TrainConfig,
                       evaluate_all, sgd_momentum_step_in_place, train_task)

__all__ = [
    "Anchor", "ConsolidationState", "DataSplit", "EpochRecord",
    "EvalContext", "ExperimentPlan", "FisherDiagonal", "ForwardCache",
    "HyperGrid", "LabeledDataset", "MetricsLog", "ModelParams", "NetConfig",
    "OptimizerState", "RegimeSpec", "TaskSpec", "TrainConfig", "accuracy",
    "apply_task", "backward", "batches", "build_preset", "cross_entropy_loss",
    "evaluate_all", "fetch_mnist", "fisher_diagonal", "forward",
    "grid_search", "init_params", "load_mnist", "make_mixed_sequence",
    "make_permuted_sequence", "make_rotated_sequence", "parse_idx",
    "penalty_value_and_grad", "register_completed_task", "run_sequence",
    "sgd_momentum_step_in_place", "single_task_reference", "snapshot_anchor",
    "split_train_validation", "summarize", "train_task",
]
