import gzip
import hashlib
import json

import numpy as np
import pytest

from consolidate.checkpoint import load_checkpoint
from consolidate.cli import main
from consolidate.core_math import make_rng
from consolidate.reporting import (CSV_COLUMNS, read_metrics_csv,
                                   read_metrics_json)


CONFIG_TOML = """
[experiment]
name = "cli-test"
benchmark = "permuted"
n_tasks = 2
seed = 5

[network]
hidden_width = 8

[training]
epochs = 1
batch_size = 32
learning_rate = 0.01
fisher_max_examples = 100

[[regime]]
name = "sgd"
mode = "none"
momentum = 0.0

[[regime]]
name = "ewc"
mode = "ewc"
momentum = 0.0
lambda = 10.0
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "experiment.toml"
    path.write_text(CONFIG_TOML)
    return path


def run_cli(*args) -> int:
    return main([str(a) for a in args])


class TestTrainCommand:
    def test_config_run_writes_all_artifacts(self, config_file,
                                             synthetic_data_dir, tmp_path):
        out = tmp_path / "run"
        code = run_cli("train", "--config", config_file,
                       "--data-dir", synthetic_data_dir, "--out", out)
        assert code == 0
        rows = read_metrics_csv(out / "metrics.csv")
        assert {row["regime"] for row in rows} == {"sgd", "ewc"}
        doc = read_metrics_json(out / "metrics.json")
        assert doc["seed"] == 5
        assert doc["config"]["n_tasks"] == 2
        params, cfg, state, extra = load_checkpoint(
            out / "checkpoint-ewc.json")
        assert cfg.hidden_width == 8
        assert state.mode == "ewc" and len(state.entries) == 2
        assert extra["regime"] == "ewc"

    def test_csv_and_json_records_agree(self, config_file,
                                        synthetic_data_dir, tmp_path):
        out = tmp_path / "run"
        assert run_cli("train", "--config", config_file,
                       "--data-dir", synthetic_data_dir, "--out", out) == 0
        csv_rows = read_metrics_csv(out / "metrics.csv")
        json_rows = read_metrics_json(out / "metrics.json")["records"]
        assert len(csv_rows) == len(json_rows)
        for a, b in zip(csv_rows, json_rows):
            for col in CSV_COLUMNS:
                assert a[col] == b[col], col

    def test_same_seed_runs_identical_apart_from_timing(
            self, config_file, synthetic_data_dir, tmp_path):
        outs = [tmp_path / "run1", tmp_path / "run2"]
        for out in outs:
            assert run_cli("train", "--config", config_file,
                           "--data-dir", synthetic_data_dir,
                           "--out", out) == 0
        rows1 = read_metrics_csv(outs[0] / "metrics.csv")
        rows2 = read_metrics_csv(outs[1] / "metrics.csv")
        assert len(rows1) == len(rows2)
        for a, b in zip(rows1, rows2):
            for col in CSV_COLUMNS:
                if col == "wall_secs":
                    continue
                assert a[col] == b[col], col

    def test_seed_override_changes_results(self, config_file,
                                           synthetic_data_dir, tmp_path):
        outs = {}
        for seed in (5, 6):
            out = tmp_path / f"run{seed}"
            assert run_cli("train", "--config", config_file,
                           "--data-dir", synthetic_data_dir, "--out", out,
                           "--seed", seed) == 0
            outs[seed] = read_metrics_csv(out / "metrics.csv")
        losses5 = [r["train_loss"] for r in outs[5]]
        losses6 = [r["train_loss"] for r in outs[6]]
        assert losses5 != losses6

    def test_unknown_config_key_exits_64(self, tmp_path, synthetic_data_dir):
        bad = tmp_path / "bad.toml"
        bad.write_text(CONFIG_TOML + "\n[experiment2]\nfoo = 1\n")
        assert run_cli("train", "--config", bad,
                       "--data-dir", synthetic_data_dir) == 64

    def test_unknown_regime_key_exits_64(self, tmp_path, synthetic_data_dir,
                                         capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text(CONFIG_TOML + "\nlearning_rte = 0.1\n")
        assert run_cli("train", "--config", bad,
                       "--data-dir", synthetic_data_dir) == 64
        assert "learning_rte" in capsys.readouterr().err

    def test_preset_and_config_together_exit_64(self, config_file,
                                                synthetic_data_dir):
        assert run_cli("train", "--preset", "fig3-left",
                       "--config", config_file,
                       "--data-dir", synthetic_data_dir) == 64

    def test_missing_data_exits_1(self, config_file, tmp_path):
        assert run_cli("train", "--config", config_file,
                       "--data-dir", tmp_path / "nowhere") == 1


class TestFetchCommand:
    @pytest.fixture
    def fake_remote(self, monkeypatch):
        import consolidate.dataset as ds

        rng = make_rng(1)
        contents, table = {}, {}
        for name in ds.MNIST_FILES:
            blob = gzip.compress(rng.integers(0, 256, 32)
                                 .astype(np.uint8).tobytes())
            contents[name] = blob
            table[name] = hashlib.sha256(blob).hexdigest()
        calls = []

        def fake_get(url, timeout=60.0):
            calls.append(url)
            return contents[url.rsplit("/", 1)[1]]

        monkeypatch.setattr(ds, "MNIST_FILES", table)
        monkeypatch.setattr(ds, "_http_get", fake_get)
        return calls

    def test_second_invocation_hits_cache(self, fake_remote, tmp_path,
                                          capsys, caplog):
        import logging
        caplog.set_level(logging.INFO)
        assert run_cli("fetch", "--data-dir", tmp_path) == 0
        assert len(fake_remote) == 4
        assert run_cli("fetch", "--data-dir", tmp_path) == 0
        assert len(fake_remote) == 4
        assert "cache valid" in caplog.text
        assert "MNIST cache ready" in capsys.readouterr().out

    def test_bad_checksum_exits_1(self, fake_remote, tmp_path, monkeypatch,
                                  capsys):
        import consolidate.dataset as ds
        monkeypatch.setattr(ds, "_http_get",
                            lambda url, timeout=60.0: b"junk")
        assert run_cli("fetch", "--data-dir", tmp_path) == 1
        assert "checksum" in capsys.readouterr().err

    def test_data_dir_flag_overrides_env(self, fake_remote, tmp_path,
                                         monkeypatch):
        env_dir = tmp_path / "env-cache"
        flag_dir = tmp_path / "flag-cache"
        monkeypatch.setenv("CONSOLIDATE_DATA_DIR", str(env_dir))
        assert run_cli("fetch", "--data-dir", flag_dir) == 0
        assert list(flag_dir.glob("*.gz"))
        assert not env_dir.exists()

    def test_env_var_used_without_flag(self, fake_remote, tmp_path,
                                       monkeypatch):
        env_dir = tmp_path / "env-cache"
        monkeypatch.setenv("CONSOLIDATE_DATA_DIR", str(env_dir))
        assert run_cli("fetch") == 0
        assert list(env_dir.glob("*.gz"))


class TestReportCommand:
    @pytest.fixture
    def metrics_dir(self, config_file, synthetic_data_dir, tmp_path):
        out = tmp_path / "run"
        assert run_cli("train", "--config", config_file,
                       "--data-dir", synthetic_data_dir, "--out", out) == 0
        return out

    def test_three_task_layout_and_determinism(self, metrics_dir):
        assert run_cli("report", metrics_dir / "metrics.csv") == 0
        target = metrics_dir / "report-tasks.svg"
        first = target.read_bytes()
        assert b"<svg" in first
        assert run_cli("report", metrics_dir / "metrics.csv") == 0
        assert target.read_bytes() == first

    def test_ten_task_layout(self, tmp_path):
        lines = [",".join(CSV_COLUMNS)]
        for task in range(5):
            for eval_task in range(task + 1):
                lines.append(f"sgd,{task},0,1.0,1.0,0.5,{eval_task},0.5,0.1")
        path = tmp_path / "metrics.csv"
        path.write_text("\n".join(lines) + "\n")
        assert run_cli("report", path, "--out", tmp_path) == 0
        assert (tmp_path / "report-sequence.svg").exists()

    def test_reference_line_drawn(self, metrics_dir):
        assert run_cli("report", metrics_dir / "metrics.csv",
                       "--reference", "0.97") == 0
        svg = (metrics_dir / "report-tasks.svg").read_text()
        assert "stroke-dasharray" in svg

    def test_empty_file_exits_65(self, tmp_path):
        empty = tmp_path / "metrics.csv"
        empty.write_text("")
        assert run_cli("report", empty) == 65

    def test_malformed_row_names_position(self, tmp_path, capsys):
        path = tmp_path / "metrics.csv"
        path.write_text(",".join(CSV_COLUMNS)
                        + "\nsgd,0,0,bad,1.0,0.5,0,0.5,0.1\n")
        assert run_cli("report", path) == 65
        err = capsys.readouterr().err
        assert "row 2" in err and "train_loss" in err

    def test_missing_file_exits_65(self, tmp_path):
        assert run_cli("report", tmp_path / "absent.csv") == 65
