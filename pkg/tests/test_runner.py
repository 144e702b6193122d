import numpy as np
import pytest

from consolidate.dataset import make_permuted_sequence
from consolidate.errors import ConfigError, DomainError
from consolidate.network import NetConfig
from consolidate.runner import (ExperimentPlan, HyperGrid, PRESET_NAMES,
                                RegimeSpec, build_preset, default_grid,
                                grid_search, render_summary, run_sequence,
                                single_task_reference, summarize)
from consolidate.training import TrainConfig


def small_regime(name, mode, lam=0.0, momentum=0.0, epochs=2,
                 dropout=False, fisher="exact_expectation"):
    net = NetConfig(hidden_width=8,
                    dropout_input=0.2 if dropout else 0.0,
                    dropout_hidden=0.5 if dropout else 0.0)
    return RegimeSpec(name, TrainConfig(epochs=epochs, batch_size=32,
                                        learning_rate=0.01,
                                        momentum=momentum, mode=mode, lam=lam,
                                        fisher_estimator=fisher,
                                        fisher_max_examples=200), net)


def small_plan(regimes, n_tasks=2, seed=3, subset=0):
    return ExperimentPlan(benchmark="permuted",
                          task_specs=make_permuted_sequence(n_tasks, seed),
                          regimes=regimes, master_seed=seed,
                          experiment_id="test-plan", subset=subset)


class TestPresets:
    @pytest.mark.parametrize("name", PRESET_NAMES)
    def test_every_preset_builds(self, name):
        plan = build_preset(name, seed=1)
        assert plan.task_specs and plan.regimes
        assert plan.experiment_id == f"{name}-seed1"

    def test_unknown_preset_rejected(self):
        with pytest.raises(ConfigError):
            build_preset("nope")

    def test_fig3_left_hyperparameters(self):
        plan = build_preset("fig3-left", seed=0)
        regimes = {r.name: r for r in plan.regimes}
        assert set(regimes) == {"sgd", "l2", "ewc"}
        assert len(plan.task_specs) == 3
        assert regimes["sgd"].train_cfg.momentum == 0.6
        assert regimes["l2"].train_cfg.lam == 0.01
        assert regimes["l2"].train_cfg.momentum == 0.6
        assert regimes["ewc"].train_cfg.lam == 10000.0
        assert regimes["ewc"].train_cfg.momentum == 0.0
        assert all(r.train_cfg.batch_size == 64 for r in plan.regimes)
        assert all(r.train_cfg.learning_rate == 1e-3 for r in plan.regimes)
        assert all(r.net_cfg.hidden_width == 400 for r in plan.regimes)

    def test_fig3_right_regimes(self):
        plan = build_preset("fig3-right", seed=0)
        names = [r.name for r in plan.regimes]
        assert names == ["sgd", "sgd_dropout", "ewc", "ewc_dropout"]
        assert len(plan.task_specs) == 10
        assert plan.include_reference
        dropout = {r.name: r for r in plan.regimes}["sgd_dropout"]
        assert dropout.net_cfg.hidden_width == 800
        assert dropout.net_cfg.dropout_input == 0.2
        assert dropout.net_cfg.dropout_hidden == 0.5

    def test_rotation_presets(self):
        rot3 = build_preset("rot-3", seed=0)
        assert [t.angle_degrees for t in rot3.task_specs] == [0, 40, 90]
        small = build_preset("rot-small", seed=0)
        assert [t.angle_degrees for t in small.task_specs] == [0, 10, 20]
        rot10 = build_preset("rot-10", seed=0)
        assert len(rot10.task_specs) == 10
        assert rot10.task_specs[-1].angle_degrees == 90.0

    def test_mixed_preset(self):
        plan = build_preset("mixed", seed=0)
        assert [t.kind for t in plan.task_specs] == ["rotation",
                                                     "permutation",
                                                     "rotation"]

    def test_seq_100ep_flags(self):
        plan = build_preset("seq-100ep", seed=0)
        for regime in plan.regimes:
            assert regime.train_cfg.epochs == 100
            assert regime.train_cfg.early_stopping
            assert regime.train_cfg.patience == 5
            assert regime.train_cfg.validation_includes_prior_tests

    def test_overrides(self):
        plan = build_preset("seq-10ep", seed=2, subset=3000, epochs=5)
        assert plan.subset == 3000
        assert all(r.train_cfg.epochs == 5 for r in plan.regimes)

    def test_empty_plan_rejected(self):
        with pytest.raises(DomainError):
            ExperimentPlan(benchmark="permuted", task_specs=[], regimes=[],
                           master_seed=0, experiment_id="x")


class TestRunSequence:
    def test_records_and_consolidation_entries(self, mnist_like):
        train, test = mnist_like
        captured = {}
        plan = small_plan([small_regime("sgd", "none"),
                           small_regime("ewc", "ewc", lam=10.0)])
        metrics = run_sequence(plan, train, test,
                               regime_callback=lambda regime, result:
                               captured.setdefault(regime.name, result))
        assert set(metrics.records) == {"sgd", "ewc"}
        # 2 tasks x 2 epochs per regime
        assert len(metrics.records["sgd"]) == 4
        assert len(metrics.final_accuracies["ewc"]) == 2
        assert len(captured["ewc"].state.entries) == 2
        assert len(captured["sgd"].state.entries) == 0
        for rec in metrics.records["ewc"]:
            assert len(rec.prev_task_acc) == rec.task_id + 1

    def test_deterministic_end_to_end(self, mnist_like):
        train, test = mnist_like
        runs = []
        for _ in range(2):
            plan = small_plan([small_regime("ewc", "ewc", lam=5.0)])
            runs.append(run_sequence(plan, train, test))
        a, b = runs
        for r1, r2 in zip(a.records["ewc"], b.records["ewc"]):
            assert r1.train_loss == r2.train_loss
            assert r1.val_loss == r2.val_loss
            assert r1.prev_task_acc == r2.prev_task_acc
        assert a.final_accuracies == b.final_accuracies

    def test_regime_order_does_not_matter(self, mnist_like):
        train, test = mnist_like
        forward_order = run_sequence(
            small_plan([small_regime("sgd", "none"),
                        small_regime("l2", "l2", lam=0.01)]), train, test)
        reverse_order = run_sequence(
            small_plan([small_regime("l2", "l2", lam=0.01),
                        small_regime("sgd", "none")]), train, test)
        for name in ("sgd", "l2"):
            fwd = forward_order.records[name]
            rev = reverse_order.records[name]
            assert [r.train_loss for r in fwd] == [r.train_loss for r in rev]
        assert forward_order.final_accuracies == reverse_order.final_accuracies

    def test_subset_caps_training_examples(self, mnist_like):
        train, test = mnist_like
        plan = small_plan([small_regime("sgd", "none")], subset=40)
        metrics = run_sequence(plan, train, test)
        assert len(metrics.records["sgd"]) == 4

    def test_single_task_reference_range_and_determinism(self, mnist_like):
        train, test = mnist_like
        plan = small_plan([small_regime("sgd", "none")], n_tasks=1)
        plan.regimes[0].net_cfg = NetConfig(hidden_width=8, dropout_input=0.2,
                                            dropout_hidden=0.5)
        a = single_task_reference(plan, train, test)
        b = single_task_reference(plan, train, test)
        assert 0.0 <= a <= 1.0
        assert a == b


class TestGridSearch:
    def test_single_point_returned(self, mnist_like):
        train, test = mnist_like
        grid = HyperGrid(batch_sizes=[32], momenta=[0.0], lambdas=[0.0],
                         learning_rates=[0.01], hidden_widths=[8])
        best, table = grid_search(grid, "none", train, test,
                                  make_permuted_sequence(1, 0),
                                  budget_epochs=1, subsample=100)
        assert len(table) == 1
        assert best["batch_size"] == 32
        assert np.isfinite(best["score"])

    def test_diverged_point_scores_minus_inf(self, mnist_like):
        train, test = mnist_like
        grid = HyperGrid(batch_sizes=[32], momenta=[0.0], lambdas=[0.0],
                         learning_rates=[0.01, 1e150],
                         hidden_widths=[8])
        with np.errstate(over="ignore", invalid="ignore"):
            best, table = grid_search(grid, "none", train, test,
                                      make_permuted_sequence(1, 0),
                                      budget_epochs=1, subsample=100,
                                      use_batch_norm=False)
        assert len(table) == 2
        diverged = [row for row in table if row["diverged"]]
        assert len(diverged) == 1
        assert diverged[0]["score"] == float("-inf")
        assert best["learning_rate"] == 0.01

    def test_default_grids_span_paper_ranges(self):
        l2 = default_grid("l2")
        assert min(l2.lambdas) == 1e-5 and max(l2.lambdas) == 1.0
        assert 0.01 in l2.lambdas
        ewc = default_grid("ewc")
        assert min(ewc.lambdas) == 1.0 and max(ewc.lambdas) == 1e4
        assert l2.batch_sizes == [32, 64, 128]

    def test_empty_axis_rejected(self):
        with pytest.raises(DomainError):
            HyperGrid(batch_sizes=[], momenta=[0.0], lambdas=[0.0],
                      learning_rates=[0.01], hidden_widths=[8])


class TestSummarize:
    def test_forgetting_nonnegative_and_lengths(self, mnist_like):
        train, test = mnist_like
        plan = small_plan([small_regime("sgd", "none"),
                           small_regime("ewc", "ewc", lam=5.0)])
        metrics = run_sequence(plan, train, test)
        summary = summarize(metrics)
        for regime in summary.regimes:
            for task in regime.tasks:
                assert task.forgetting >= 0.0
                assert task.peak_acc >= task.final_acc
            assert len(regime.pooled_trajectory) == 4
            assert len(regime.task_first_trajectory) == 4

    def test_single_task_forgetting_zero(self, mnist_like):
        train, test = mnist_like
        plan = small_plan([small_regime("sgd", "none")], n_tasks=1)
        metrics = run_sequence(plan, train, test)
        summary = summarize(metrics)
        # final equals the last recorded accuracy, so peak >= final with
        # forgetting exactly peak - final; a single improving task gives 0
        task = summary.regimes[0].tasks[0]
        assert task.forgetting == pytest.approx(
            task.peak_acc - task.final_acc)

    def test_render_contains_regimes(self, mnist_like):
        train, test = mnist_like
        plan = small_plan([small_regime("sgd", "none")])
        text = render_summary(summarize(run_sequence(plan, train, test)))
        assert "sgd" in text and "pooled" in text
