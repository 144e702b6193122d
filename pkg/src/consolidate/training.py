"""Mini-batch SGD with momentum, per-task training loop, evaluation.

One call to ``train_task`` runs a full task: shuffled mini-batches of the
task's training split, the consolidation penalty folded into every
gradient step, per-epoch validation plus re-evaluation of all earlier
tasks, and optional early stopping on consecutive validation-error rises.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .consolidation import ConsolidationState, penalty_value_and_grad
from .core_math import derive_rng
from .dataset import DataSplit, LabeledDataset, TaskSpec, apply_task, batches
from .errors import ConsistencyError, DivergenceError, DomainError
from .network import (Gradients, ModelParams, NetConfig, accuracy, backward,
                      cross_entropy_loss, dataset_loss, forward,
                      update_running_stats_in_place)


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]
    learning_rate: float
    momentum: float

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise DomainError(f"learning rate must be > 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must lie in [0, 1), got {self.momentum}")

    @classmethod
    def for_params(cls, params: ModelParams, learning_rate: float,
                   momentum: float) -> "OptimizerState":
        velocity = {k: np.zeros_like(v) for k, v in params.trainable().items()}
        return cls(velocity=velocity, learning_rate=learning_rate,
                   momentum=momentum)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    momentum: float = 0.6
    patience: int = 5
    early_stopping: bool = False
    lam: float = 0.0
    mode: str = "none"
    seed: int = 0
    stop_on_accuracy: bool = False
    validation_includes_prior_tests: bool = False
    fisher_estimator: str = "exact_expectation"
    fisher_max_examples: int = 2000

    def __post_init__(self):
        if self.epochs < 1:
            raise DomainError(f"epochs must be >= 1, got {self.epochs}")
        if self.early_stopping and self.patience < 1:
            raise DomainError("patience must be >= 1 when early stopping is on")


@dataclass
class EpochRecord:
    task_id: int
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    prev_task_acc: tuple[float, ...]
    wall_secs: float


@dataclass
class EvalContext:
    """Tasks seen so far, cached transformed test sets, and per-task
    batch-norm statistics recorded when anchored regimes finish a task."""

    test_data: LabeledDataset
    tasks: list[TaskSpec] = field(default_factory=list)
    _transformed: dict[int, LabeledDataset] = field(default_factory=dict)
    _bn_stats: dict[int, tuple] = field(default_factory=dict)

    def add_task(self, task: TaskSpec) -> None:
        self.tasks.append(task)

    def transformed_test(self, task: TaskSpec) -> LabeledDataset:
        if task.task_id not in self._transformed:
            self._transformed[task.task_id] = apply_task(self.test_data, task)
        return self._transformed[task.task_id]

    def prior_tests(self, current_task_id: int) -> list[LabeledDataset]:
        return [self.transformed_test(t) for t in self.tasks
                if t.task_id < current_task_id]

    def record_bn_stats(self, task_id: int, bn_running: tuple | None) -> None:
        if bn_running is not None:
            self._bn_stats[task_id] = bn_running

    def eval_params_for(self, task_id: int, params: ModelParams) -> ModelParams:
        """Parameters to evaluate ``task_id`` with: live ones, except that
        tasks with recorded statistics are normalized by their own."""
        stats = self._bn_stats.get(task_id)
        if stats is None or not params.has_batch_norm:
            return params
        return params.with_bn_stats(*stats)


def sgd_momentum_step_in_place(params: ModelParams, grads: Gradients,
                               opt: OptimizerState) -> None:
    """v <- momentum * v + g; theta <- theta - lr * v, leaf-wise in place."""
    live = params.trainable()
    if set(live) != set(grads) or set(live) != set(opt.velocity):
        raise ConsistencyError(
            f"parameter/gradient/velocity trees disagree: "
            f"{sorted(live)} vs {sorted(grads)} vs {sorted(opt.velocity)}")
    for key, theta in live.items():
        g = grads[key]
        v = opt.velocity[key]
        if g.shape != theta.shape or v.shape != theta.shape:
            raise ConsistencyError(
                f"shape mismatch at {key}: theta {theta.shape}, "
                f"grad {g.shape}, velocity {v.shape}")
        v *= opt.momentum
        v += g
        theta -= opt.learning_rate * v


class EarlyStopper:
    """Halts after `patience` consecutive validation-error rises.

    A rise is a strictly greater error than the immediately preceding
    epoch's; equality resets the run. The best-so-far snapshot (lowest
    error seen) is retained for restoration.
    """

    def __init__(self, patience: int):
        if patience < 1:
            raise DomainError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best_error = np.inf
        self.best_snapshot = None
        self.consecutive_rises = 0
        self._prev_error: float | None = None

    def update(self, error: float, snapshot) -> bool:
        """Record one epoch's validation error; returns True to halt."""
        if self._prev_error is not None and error > self._prev_error:
            self.consecutive_rises += 1
        else:
            self.consecutive_rises = 0
        if error < self.best_error:
            self.best_error = error
            self.best_snapshot = snapshot
        self._prev_error = error
        return self.consecutive_rises >= self.patience


def evaluate_all(params: ModelParams, tasks_so_far: list[TaskSpec],
                 test_data: LabeledDataset, net_cfg: NetConfig,
                 ctx: EvalContext | None = None
                 ) -> tuple[list[float], float]:
    """Accuracy on every past task's transformed test set, plus the pooled
    accuracy over the union of those test sets (example-weighted mean)."""
    if not tasks_so_far:
        raise DomainError("evaluate_all needs at least one task")
    per_task: list[float] = []
    sizes: list[int] = []
    for task in tasks_so_far:
        if ctx is not None:
            transformed = ctx.transformed_test(task)
            eval_params = ctx.eval_params_for(task.task_id, params)
        else:
            transformed = apply_task(test_data, task)
            eval_params = params
        per_task.append(accuracy(eval_params, transformed, net_cfg))
        sizes.append(transformed.n)
    pooled = float(np.average(per_task, weights=sizes))
    return per_task, pooled


def _concat(datasets: list[LabeledDataset]) -> LabeledDataset:
    return LabeledDataset(np.concatenate([d.images for d in datasets]),
                          np.concatenate([d.labels for d in datasets]))


def train_task(params: ModelParams, split: DataSplit,
               state: ConsolidationState, cfg: TrainConfig,
               net_cfg: NetConfig, ctx: EvalContext
               ) -> tuple[ModelParams, list[EpochRecord]]:
    """Train the current task (the last one in ``ctx.tasks``).

    Runs up to cfg.epochs epochs of shuffled mini-batches minimizing
    task loss + consolidation penalty. Every epoch records validation
    metrics and the test accuracy of all tasks seen so far. With early
    stopping enabled, halts after `patience` consecutive validation-error
    rises and returns the best parameters observed.
    """
    task_id = ctx.tasks[-1].task_id
    opt = OptimizerState.for_params(params, cfg.learning_rate, cfg.momentum)
    stopper = EarlyStopper(cfg.patience) if cfg.early_stopping else None

    monitored = split.validation
    if cfg.validation_includes_prior_tests:
        prior = ctx.prior_tests(task_id)
        if prior:
            monitored = _concat([split.validation] + prior)

    records: list[EpochRecord] = []
    for epoch in range(cfg.epochs):
        t_start = time.perf_counter()
        shuffle_rng = derive_rng(cfg.seed, "shuffle", task_id, epoch)
        dropout_rng = derive_rng(cfg.seed, "dropout", task_id, epoch)

        batch_losses = []
        for xb, yb in batches(split.train, cfg.batch_size, shuffle_rng):
            logits, cache = forward(params, xb, "train", net_cfg,
                                    rng=dropout_rng)
            task_loss = cross_entropy_loss(logits, yb)
            pen_value, pen_grad = penalty_value_and_grad(params.trainable(),
                                                         state)
            total = task_loss + pen_value
            if not np.isfinite(total):
                raise DivergenceError(
                    f"non-finite loss at task {task_id} epoch {epoch} "
                    f"(lambda={state.lam:g}): task={task_loss:g} "
                    f"penalty={pen_value:g}",
                    epoch=epoch, lam=state.lam, task_id=task_id)
            grads = backward(params, cache, yb, net_cfg)
            for key in grads:
                grads[key] = grads[key] + pen_grad[key]
            sgd_momentum_step_in_place(params, grads, opt)
            update_running_stats_in_place(params, cache)
            batch_losses.append(task_loss)

        val_loss = dataset_loss(params, monitored, net_cfg)
        val_acc = accuracy(params, monitored, net_cfg)
        per_task, _pooled = evaluate_all(params, ctx.tasks, ctx.test_data,
                                         net_cfg, ctx=ctx)
        records.append(EpochRecord(
            task_id=task_id, epoch=epoch,
            train_loss=float(np.mean(batch_losses)),
            val_loss=val_loss, val_acc=val_acc,
            prev_task_acc=tuple(per_task),
            wall_secs=time.perf_counter() - t_start))

        if stopper is not None:
            error = (1.0 - val_acc) if cfg.stop_on_accuracy else val_loss
            if stopper.update(error, params.copy()):
                break

    if stopper is not None and stopper.best_snapshot is not None:
        params = stopper.best_snapshot
    return params, records
