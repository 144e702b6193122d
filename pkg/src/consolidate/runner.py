"""Sequential-benchmark orchestration: full experiment plans, the
single-task reference run, grid-search cross-validation, and summaries.

A plan holds an ordered task sequence plus one or more training regimes
(plain SGD, L2 anchoring, EWC, each optionally with dropout). Regimes
never share state: each gets a fresh model initialized from the same
derived seed, so curves are comparable across regimes.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .consolidation import (ConsolidationState, fisher_diagonal,
                            register_completed_task, snapshot_anchor,
                            unit_fisher)
from .core_math import derive_rng
from .dataset import (DataSplit, LabeledDataset, TaskSpec, apply_task,
                      make_mixed_sequence, make_permuted_sequence,
                      make_rotated_sequence, split_train_validation)
from .errors import ConfigError, DivergenceError, DomainError
from .network import NetConfig, accuracy, init_params
from .training import (EpochRecord, EvalContext, TrainConfig, evaluate_all,
                       train_task)

log = logging.getLogger(__name__)

VALIDATION_FRACTION = 1.0 / 6.0   # 10k of the 60k training images


@dataclass
class RegimeSpec:
    """One training regime: a name plus its training and network configs."""

    name: str
    train_cfg: TrainConfig
    net_cfg: NetConfig


@dataclass
class ExperimentPlan:
    benchmark: str
    task_specs: list[TaskSpec]
    regimes: list[RegimeSpec]
    master_seed: int
    experiment_id: str
    subset: int = 0               # per-task cap on training examples; 0 = all
    validation_fraction: float = VALIDATION_FRACTION
    include_reference: bool = False

    def __post_init__(self):
        if not self.task_specs or not self.regimes:
            raise DomainError("a plan needs at least one task and one regime")


@dataclass
class MetricsLog:
    experiment_id: str
    master_seed: int
    records: dict[str, list[EpochRecord]] = field(default_factory=dict)
    final_accuracies: dict[str, list[float]] = field(default_factory=dict)
    final_pooled: dict[str, float] = field(default_factory=dict)
    single_task_reference: float | None = None
    config_echo: dict = field(default_factory=dict)


@dataclass
class HyperGrid:
    batch_sizes: list[int]
    momenta: list[float]
    lambdas: list[float]
    learning_rates: list[float]
    hidden_widths: list[int]

    def __post_init__(self):
        for name in ("batch_sizes", "momenta", "lambdas", "learning_rates",
                     "hidden_widths"):
            if not getattr(self, name):
                raise DomainError(f"grid axis {name} must be nonempty")

    def points(self):
        return itertools.product(self.batch_sizes, self.momenta, self.lambdas,
                                 self.learning_rates, self.hidden_widths)


# ----------------------------------------------------------------------
# Core sequential run
# ----------------------------------------------------------------------

@dataclass
class RegimeResult:
    records: list[EpochRecord]
    final_per_task: list[float]
    final_pooled: float
    params: object
    ctx: EvalContext
    state: ConsolidationState


def _task_train_subset(train: LabeledDataset, subset: int, master_seed: int,
                       task_id: int) -> LabeledDataset:
    if subset <= 0 or subset >= train.n:
        return train
    idx = derive_rng(master_seed, "subset", task_id).choice(
        train.n, size=subset, replace=False)
    return train.subset(idx)


def _run_regime(plan: ExperimentPlan, regime: RegimeSpec,
                base_train: LabeledDataset, base_val: LabeledDataset,
                test_data: LabeledDataset) -> RegimeResult:
    train_cfg = replace(regime.train_cfg, seed=plan.master_seed)
    net_cfg = replace(regime.net_cfg, init_seed=plan.master_seed)
    params = init_params(net_cfg)
    state = ConsolidationState(mode=train_cfg.mode, lam=train_cfg.lam)
    ctx = EvalContext(test_data=test_data)

    records: list[EpochRecord] = []
    for task in plan.task_specs:
        ctx.add_task(task)
        subset_train = _task_train_subset(base_train, plan.subset,
                                          plan.master_seed, task.task_id)
        split = DataSplit(train=apply_task(subset_train, task),
                          validation=apply_task(base_val, task))
        try:
            params, recs = train_task(params, split, state, train_cfg,
                                      net_cfg, ctx)
        except DivergenceError as exc:
            exc.regime = regime.name
            raise
        records.extend(recs)
        log.info("[%s] finished %s (task %d): last epoch accs %s",
                 regime.name, task.describe(), task.task_id,
                 ["%.4f" % a for a in recs[-1].prev_task_acc])

        if train_cfg.mode != "none":
            anchor = snapshot_anchor(params, task.task_id)
            fisher = None
            if train_cfg.mode == "ewc":
                if train_cfg.fisher_estimator == "unit":
                    fisher = unit_fisher(anchor)
                else:
                    fisher = fisher_diagonal(
                        params, split.train, net_cfg,
                        estimator=train_cfg.fisher_estimator,
                        max_examples=train_cfg.fisher_max_examples,
                        rng=derive_rng(plan.master_seed, "fisher", task.task_id),
                        task_id=task.task_id)
            state = register_completed_task(state, anchor, fisher)
            ctx.record_bn_stats(task.task_id, anchor.bn_running)

    final_per_task, final_pooled = evaluate_all(params, ctx.tasks, test_data,
                                                net_cfg, ctx=ctx)
    return RegimeResult(records=records, final_per_task=final_per_task,
                        final_pooled=final_pooled, params=params, ctx=ctx,
                        state=state)


def run_sequence(plan: ExperimentPlan, train_data: LabeledDataset,
                 test_data: LabeledDataset,
                 regime_callback=None) -> MetricsLog:
    """Run every regime of the plan over the full task sequence.

    ``regime_callback(regime, result)``, when given, fires after each
    regime finishes (the CLI uses it to write checkpoints).
    """
    base_split = split_train_validation(
        train_data, plan.validation_fraction,
        derive_rng(plan.master_seed, "split"))

    metrics = MetricsLog(experiment_id=plan.experiment_id,
                         master_seed=plan.master_seed,
                         config_echo=plan_echo(plan))
    for regime in plan.regimes:
        result = _run_regime(plan, regime, base_split.train,
                             base_split.validation, test_data)
        metrics.records[regime.name] = result.records
        metrics.final_accuracies[regime.name] = result.final_per_task
        metrics.final_pooled[regime.name] = result.final_pooled
        if regime_callback is not None:
            regime_callback(regime, result)

    if plan.include_reference:
        metrics.single_task_reference = single_task_reference(
            plan, train_data, test_data)
    return metrics


def reference_regime(epochs: int) -> RegimeSpec:
    """The SGD + dropout model used for the single-task reference line."""
    return RegimeSpec(
        name="single_task_reference",
        train_cfg=TrainConfig(epochs=epochs, momentum=0.6, mode="none"),
        net_cfg=NetConfig(hidden_width=800, dropout_input=0.2,
                          dropout_hidden=0.5))


def single_task_reference(plan: ExperimentPlan, train_data: LabeledDataset,
                          test_data: LabeledDataset) -> float:
    """Test accuracy on the first task after training SGD + dropout on it."""
    regime = reference_regime(plan.regimes[0].train_cfg.epochs)
    ref_plan = replace(plan, task_specs=plan.task_specs[:1],
                       regimes=[regime], include_reference=False,
                       experiment_id=plan.experiment_id + "-reference")
    base_split = split_train_validation(
        train_data, ref_plan.validation_fraction,
        derive_rng(ref_plan.master_seed, "split"))
    result = _run_regime(ref_plan, regime, base_split.train,
                         base_split.validation, test_data)
    return result.final_per_task[0]


# ----------------------------------------------------------------------
# Grid-search cross-validation
# ----------------------------------------------------------------------

def default_grid(regime_mode: str) -> HyperGrid:
    """Paper-derived default grids per regime."""
    lambdas = {"none": [0.0],
               "l2": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0],
               "ewc": [1.0, 10.0, 100.0, 1000.0, 1e4]}.get(regime_mode)
    if lambdas is None:
        raise DomainError(f"unknown regime mode {regime_mode!r}")
    return HyperGrid(batch_sizes=[32, 64, 128],
                     momenta=[0.0, 0.2, 0.4, 0.6, 0.8, 0.9],
                     lambdas=lambdas,
                     learning_rates=[1e-3],
                     hidden_widths=[400])


def grid_search(grid: HyperGrid, regime_mode: str,
                train_data: LabeledDataset, test_data: LabeledDataset,
                subset_tasks: list[TaskSpec], *, budget_epochs: int = 3,
                subsample: int = 10000, master_seed: int = 0,
                use_batch_norm: bool = True
                ) -> tuple[dict, list[dict]]:
    """Score every grid point on validation accuracy after the subset
    sequence; returns (best point, full table).

    The score is the mean, over the subset tasks, of final validation
    accuracy on each task's transformed validation split. Diverging
    points score -inf instead of aborting the search. Ties break toward
    smaller batch, then smaller lambda, then smaller momentum.
    """
    table: list[dict] = []
    for batch, momentum, lam, lr, width in grid.points():
        train_cfg = TrainConfig(epochs=budget_epochs, batch_size=batch,
                                learning_rate=lr, momentum=momentum,
                                lam=lam, mode=regime_mode)
        net_cfg = NetConfig(hidden_width=width, use_batch_norm=use_batch_norm)
        plan = ExperimentPlan(
            benchmark="crossval", task_specs=subset_tasks,
            regimes=[RegimeSpec("candidate", train_cfg, net_cfg)],
            master_seed=master_seed, experiment_id="crossval",
            subset=subsample)
        base_split = split_train_validation(
            train_data, plan.validation_fraction,
            derive_rng(master_seed, "split"))
        row = {"batch_size": batch, "momentum": momentum, "lambda": lam,
               "learning_rate": lr, "hidden_width": width,
               "score": float("-inf"), "diverged": False}
        try:
            result = _run_regime(plan, plan.regimes[0], base_split.train,
                                 base_split.validation, test_data)
            val_accs = [accuracy(result.params,
                                 apply_task(base_split.validation, task),
                                 net_cfg)
                        for task in subset_tasks]
            row["score"] = float(np.mean(val_accs))
        except DivergenceError as exc:
            log.warning("grid point diverged (%s): %s", row, exc)
            row["diverged"] = True
        table.append(row)

    best = min(table, key=lambda r: (-r["score"], r["batch_size"], r["lambda"],
                                     r["momentum"], r["learning_rate"],
                                     r["hidden_width"]))
    return dict(best), table


# ----------------------------------------------------------------------
# Summaries
# ----------------------------------------------------------------------

@dataclass
class TaskSummary:
    task_id: int
    final_acc: float
    peak_acc: float
    forgetting: float


@dataclass
class RegimeSummary:
    regime: str
    tasks: list[TaskSummary]
    pooled_trajectory: list[float]
    task_first_trajectory: list[float]
    final_pooled: float


@dataclass
class Summary:
    experiment_id: str
    regimes: list[RegimeSummary]
    single_task_reference: float | None


def summarize(metrics: MetricsLog) -> Summary:
    """Per regime: final and peak accuracy per task, forgetting
    (peak minus final), pooled-average and first-task trajectories."""
    if not metrics.records:
        raise DomainError("empty metrics log")
    regimes = []
    for regime, records in metrics.records.items():
        if not records:
            raise DomainError(f"regime {regime} has no records")
        n_tasks = len(records[-1].prev_task_acc)
        finals = metrics.final_accuracies.get(
            regime, list(records[-1].prev_task_acc))
        tasks = []
        for pos in range(n_tasks):
            curve = [rec.prev_task_acc[pos] for rec in records
                     if len(rec.prev_task_acc) > pos]
            peak = max(curve)
            tasks.append(TaskSummary(task_id=pos, final_acc=finals[pos],
                                     peak_acc=peak,
                                     forgetting=peak - finals[pos]))
        pooled = [float(np.mean(rec.prev_task_acc)) for rec in records]
        first = [rec.prev_task_acc[0] for rec in records]
        regimes.append(RegimeSummary(
            regime=regime, tasks=tasks, pooled_trajectory=pooled,
            task_first_trajectory=first,
            final_pooled=metrics.final_pooled.get(regime, pooled[-1])))
    return Summary(experiment_id=metrics.experiment_id, regimes=regimes,
                   single_task_reference=metrics.single_task_reference)


def render_summary(summary: Summary) -> str:
    lines = [f"experiment: {summary.experiment_id}"]
    if summary.single_task_reference is not None:
        lines.append(f"single-task reference: "
                     f"{summary.single_task_reference:.4f}")
    header = f"{'regime':<16}{'task':>6}{'final':>9}{'peak':>9}{'forgot':>9}"
    lines.append(header)
    lines.append("-" * len(header))
    for reg in summary.regimes:
        for t in reg.tasks:
            lines.append(f"{reg.regime:<16}{t.task_id:>6}"
                         f"{t.final_acc:>9.4f}{t.peak_acc:>9.4f}"
                         f"{t.forgetting:>9.4f}")
        lines.append(f"{reg.regime:<16}{'pooled':>6}{reg.final_pooled:>9.4f}")
    return "\n".join(lines)


# ----------------------------------------------------------------------
# Replication presets
# ----------------------------------------------------------------------

def _sgd_regime(epochs: int) -> RegimeSpec:
    return RegimeSpec("sgd", TrainConfig(epochs=epochs, momentum=0.6,
                                         mode="none"), NetConfig())


def _l2_regime(epochs: int) -> RegimeSpec:
    return RegimeSpec("l2", TrainConfig(epochs=epochs, momentum=0.6,
                                        mode="l2", lam=0.01), NetConfig())


def _ewc_regime(epochs: int) -> RegimeSpec:
    return RegimeSpec("ewc", TrainConfig(epochs=epochs, momentum=0.0,
                                         mode="ewc", lam=1e4), NetConfig())


def _dropout_net() -> NetConfig:
    return NetConfig(hidden_width=800, dropout_input=0.2, dropout_hidden=0.5)


def _sgd_dropout_regime(epochs: int) -> RegimeSpec:
    return RegimeSpec("sgd_dropout",
                      TrainConfig(epochs=epochs, momentum=0.6, mode="none"),
                      _dropout_net())


def _ewc_dropout_regime(epochs: int) -> RegimeSpec:
    return RegimeSpec("ewc_dropout",
                      TrainConfig(epochs=epochs, momentum=0.0, mode="ewc",
                                  lam=1e4),
                      _dropout_net())


def build_preset(name: str, seed: int = 0, subset: int = 0,
                 epochs: int | None = None) -> ExperimentPlan:
    """Named replication plans; ``subset`` and ``epochs`` override the
    preset's defaults when nonzero/non-None."""
    builders = {
        "fig3-left": _preset_fig3_left,
        "fig3-right": _preset_fig3_right,
        "rot-3": _preset_rot3,
        "rot-small": _preset_rot_small,
        "rot-10": _preset_rot10,
        "mixed": _preset_mixed,
        "seq-10ep": _preset_seq_10ep,
        "seq-100ep": _preset_seq_100ep,
    }
    if name not in builders:
        raise ConfigError(f"unknown preset {name!r}; available: "
                          f"{', '.join(sorted(builders))}")
    plan = builders[name](seed)
    if subset:
        plan.subset = subset
    if epochs is not None:
        for regime in plan.regimes:
            regime.train_cfg = replace(regime.train_cfg, epochs=epochs)
    plan.experiment_id = f"{name}-seed{seed}"
    return plan


PRESET_NAMES = ("fig3-left", "fig3-right", "rot-3", "rot-small", "rot-10",
                "mixed", "seq-10ep", "seq-100ep")


def _preset_fig3_left(seed: int) -> ExperimentPlan:
    return ExperimentPlan(
        benchmark="permuted", task_specs=make_permuted_sequence(3, seed),
        regimes=[_sgd_regime(10), _l2_regime(10), _ewc_regime(10)],
        master_seed=seed, experiment_id="fig3-left")


def _preset_fig3_right(seed: int) -> ExperimentPlan:
    return ExperimentPlan(
        benchmark="permuted", task_specs=make_permuted_sequence(10, seed),
        regimes=[_sgd_regime(10), _sgd_dropout_regime(10),
                 _ewc_regime(10), _ewc_dropout_regime(10)],
        master_seed=seed, experiment_id="fig3-right", include_reference=True)


def _preset_rot3(seed: int) -> ExperimentPlan:
    return ExperimentPlan(
        benchmark="rotated", task_specs=make_rotated_sequence([0, 40, 90]),
        regimes=[_sgd_regime(10), _l2_regime(10), _ewc_regime(10)],
        master_seed=seed, experiment_id="rot-3")


def _preset_rot_small(seed: int) -> ExperimentPlan:
    return ExperimentPlan(
        benchmark="rotated", task_specs=make_rotated_sequence([0, 10, 20]),
        regimes=[_sgd_regime(10), _l2_regime(10), _ewc_regime(10)],
        master_seed=seed, experiment_id="rot-small")


def _preset_rot10(seed: int) -> ExperimentPlan:
    angles = [float(a) for a in range(0, 100, 10)]
    return ExperimentPlan(
        benchmark="rotated", task_specs=make_rotated_sequence(angles),
        regimes=[_sgd_regime(10), _sgd_dropout_regime(10),
                 _ewc_regime(10), _ewc_dropout_regime(10)],
        master_seed=seed, experiment_id="rot-10", include_reference=True)


def _preset_mixed(seed: int) -> ExperimentPlan:
    return ExperimentPlan(
        benchmark="mixed", task_specs=make_mixed_sequence(seed),
        regimes=[_sgd_regime(10), _l2_regime(10), _ewc_regime(10)],
        master_seed=seed, experiment_id="mixed")


def _preset_seq_10ep(seed: int) -> ExperimentPlan:
    return ExperimentPlan(
        benchmark="permuted", task_specs=make_permuted_sequence(10, seed),
        regimes=[_sgd_regime(10), _ewc_regime(10)],
        master_seed=seed, experiment_id="seq-10ep")


def _preset_seq_100ep(seed: int) -> ExperimentPlan:
    regimes = [_sgd_regime(100), _ewc_regime(100)]
    for regime in regimes:
        regime.train_cfg = replace(regime.train_cfg, early_stopping=True,
                                   patience=5,
                                   validation_includes_prior_tests=True)
    return ExperimentPlan(
        benchmark="permuted", task_specs=make_permuted_sequence(10, seed),
        regimes=regimes, master_seed=seed, experiment_id="seq-100ep")


def plan_echo(plan: ExperimentPlan) -> dict:
    """Flat description of a plan for embedding in metrics exports."""
    return {
        "benchmark": plan.benchmark,
        "experiment_id": plan.experiment_id,
        "n_tasks": len(plan.task_specs),
        "tasks": [t.describe() for t in plan.task_specs],
        "master_seed": plan.master_seed,
        "subset": plan.subset,
        "validation_fraction": plan.validation_fraction,
        "regimes": [{
            "name": r.name,
            "mode": r.train_cfg.mode,
            "lambda": r.train_cfg.lam,
            "epochs": r.train_cfg.epochs,
            "batch_size": r.train_cfg.batch_size,
            "learning_rate": r.train_cfg.learning_rate,
            "momentum": r.train_cfg.momentum,
            "early_stopping": r.train_cfg.early_stopping,
            "patience": r.train_cfg.patience,
            "hidden_width": r.net_cfg.hidden_width,
            "batch_norm": r.net_cfg.use_batch_norm,
            "dropout_input": r.net_cfg.dropout_input,
            "dropout_hidden": r.net_cfg.dropout_hidden,
            "fisher_estimator": r.train_cfg.fisher_estimator,
            "fisher_max_examples": r.train_cfg.fisher_max_examples,
        } for r in plan.regimes],
    }
