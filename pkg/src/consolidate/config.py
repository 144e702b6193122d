"""TOML experiment configuration: strict parsing and plan construction.

Unknown keys are rejected everywhere so a typo cannot silently fall back
to a default. Every recognized key has a documented default (see
README). A config file mirrors an ExperimentPlan: one [experiment]
table, optional [network] and [training] default tables, and one or
more [[regime]] blocks that may override any default.
"""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import (make_mixed_sequence, make_permuted_sequence,
                      make_rotated_sequence)
from .errors import ConfigError, DomainError
from .network import NetConfig
from .runner import VALIDATION_FRACTION, ExperimentPlan, RegimeSpec
from .training import TrainConfig

EXPERIMENT_KEYS = {"name", "benchmark", "n_tasks", "angles", "seed", "subset",
                   "include_reference", "validation_fraction"}
NETWORK_KEYS = {"hidden_width", "batch_norm", "dropout_input",
                "dropout_hidden"}
TRAINING_KEYS = {"epochs", "batch_size", "learning_rate", "momentum",
                 "early_stopping", "patience", "stop_on_accuracy",
                 "validation_includes_prior_tests", "fisher_estimator",
                 "fisher_max_examples", "lambda"}
REGIME_KEYS = {"name", "mode"} | NETWORK_KEYS | TRAINING_KEYS
TOP_KEYS = {"experiment", "network", "training", "regime"}


def _reject_unknown(table: dict, allowed: set[str], where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: "
                          f"{', '.join(sorted(unknown))}")


def _net_config(defaults: dict, overrides: dict) -> NetConfig:
    merged = {**defaults, **{k: v for k, v in overrides.items()
                             if k in NETWORK_KEYS}}
    try:
        return NetConfig(hidden_width=merged.get("hidden_width", 400),
                         use_batch_norm=merged.get("batch_norm", True),
                         dropout_input=merged.get("dropout_input", 0.0),
                         dropout_hidden=merged.get("dropout_hidden", 0.0))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _train_config(defaults: dict, overrides: dict, mode: str) -> TrainConfig:
    merged = {**defaults, **{k: v for k, v in overrides.items()
                             if k in TRAINING_KEYS}}
    try:
        return TrainConfig(
            epochs=merged.get("epochs", 10),
            batch_size=merged.get("batch_size", 64),
            learning_rate=merged.get("learning_rate", 1e-3),
            momentum=merged.get("momentum", 0.6),
            patience=merged.get("patience", 5),
            early_stopping=merged.get("early_stopping", False),
            lam=merged.get("lambda", 0.0),
            mode=mode,
            stop_on_accuracy=merged.get("stop_on_accuracy", False),
            validation_includes_prior_tests=merged.get(
                "validation_includes_prior_tests", False),
            fisher_estimator=merged.get("fisher_estimator",
                                        "exact_expectation"),
            fisher_max_examples=merged.get("fisher_max_examples", 2000))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def plan_from_doc(doc: dict, *, seed_override: int | None = None,
                  subset_override: int | None = None,
                  epochs_override: int | None = None) -> ExperimentPlan:
    _reject_unknown(doc, TOP_KEYS, "config")
    exp = doc.get("experiment", {})
    _reject_unknown(exp, EXPERIMENT_KEYS, "[experiment]")
    net_defaults = doc.get("network", {})
    _reject_unknown(net_defaults, NETWORK_KEYS, "[network]")
    train_defaults = doc.get("training", {})
    _reject_unknown(train_defaults, TRAINING_KEYS, "[training]")

    seed = seed_override if seed_override is not None else exp.get("seed", 0)
    benchmark = exp.get("benchmark", "permuted")
    if benchmark == "permuted":
        tasks = make_permuted_sequence(exp.get("n_tasks", 3), seed)
    elif benchmark == "rotated":
        if "angles" not in exp:
            raise ConfigError("rotated benchmark requires [experiment] angles")
        tasks = make_rotated_sequence(exp["angles"])
    elif benchmark == "mixed":
        tasks = make_mixed_sequence(seed)
    else:
        raise ConfigError(f"unknown benchmark {benchmark!r}")

    regime_docs = doc.get("regime", [])
    if not regime_docs:
        raise ConfigError("config needs at least one [[regime]] block")
    regimes = []
    for i, rdoc in enumerate(regime_docs):
        _reject_unknown(rdoc, REGIME_KEYS, f"[[regime]] #{i + 1}")
        mode = rdoc.get("mode", "none")
        if mode not in ("none", "l2", "ewc"):
            raise ConfigError(f"[[regime]] #{i + 1}: unknown mode {mode!r}")
        name = rdoc.get("name", f"regime{i + 1}")
        train_cfg = _train_config(train_defaults, rdoc, mode)
        if epochs_override is not None:
            train_cfg.epochs = epochs_override
        regimes.append(RegimeSpec(name=name,
                                  train_cfg=train_cfg,
                                  net_cfg=_net_config(net_defaults, rdoc)))
    names = [r.name for r in regimes]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate regime names: {names}")

    subset = subset_override if subset_override is not None \
        else exp.get("subset", 0)
    try:
        return ExperimentPlan(
            benchmark=benchmark, task_specs=tasks, regimes=regimes,
            master_seed=seed,
            experiment_id=exp.get("name", f"custom-seed{seed}"),
            subset=subset,
            validation_fraction=exp.get("validation_fraction",
                                        VALIDATION_FRACTION),
            include_reference=exp.get("include_reference", False))
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Path, **overrides) -> ExperimentPlan:
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return plan_from_doc(doc, **overrides)


GRID_KEYS = {"batch_sizes", "momenta", "lambdas", "learning_rates",
             "hidden_widths"}


def load_grid(path: Path) -> dict:
    """Read a [grid] table replacing the default cross-validation grid."""
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"grid file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    _reject_unknown(doc, {"grid"}, "grid file")
    grid = doc.get("grid", {})
    _reject_unknown(grid, GRID_KEYS, "[grid]")
    return grid


# ----------------------------------------------------------------------
# Minimal TOML writing (winning crossval configs, scalars and flat lists)
# ----------------------------------------------------------------------

def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {type(value).__name__} to TOML")


def write_toml(path: Path, doc: dict) -> None:
    """Serialize {table: {key: scalar}} plus list-of-table entries."""
    lines: list[str] = []
    for section, content in doc.items():
        if isinstance(content, list):
            for entry in content:
                lines.append(f"[[{section}]]")
                for key, val in entry.items():
                    lines.append(f"{key} = {_toml_value(val)}")
                lines.append("")
        else:
            lines.append(f"[{section}]")
            for key, val in content.items():
                lines.append(f"{key} = {_toml_value(val)}")
            lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")
