"""JSON checkpoint container for model and consolidation state.

Arrays are stored as base64-encoded little-endian float64 bytes plus an
explicit shape, which makes the write/read round trip bit-exact. The
container also embeds the consolidation snapshots so a sequential run
can resume mid-sequence.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .consolidation import Anchor, ConsolidationState, FisherDiagonal
from .errors import ParseError
from .network import ModelParams, NetConfig

CHECKPOINT_FORMAT = "consolidate-checkpoint-v1"


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape),
            "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(obj["shape"])


def _encode_tree(tree: dict[str, np.ndarray]) -> dict:
    return {key: _encode_array(arr) for key, arr in tree.items()}


def _decode_tree(obj: dict) -> dict[str, np.ndarray]:
    return {key: _decode_array(val) for key, val in obj.items()}


def _encode_array_list(arrs) -> list | None:
    return None if arrs is None else [_encode_array(a) for a in arrs]


def _decode_array_list(objs) -> list | None:
    return None if objs is None else [_decode_array(o) for o in objs]


def save_checkpoint(path: Path, params: ModelParams, net_cfg: NetConfig,
                    state: ConsolidationState | None = None,
                    extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "net_config": asdict(net_cfg),
        "params": {
            "weights": _encode_array_list(params.weights),
            "biases": _encode_array_list(params.biases),
            "bn_gamma": _encode_array_list(params.bn_gamma),
            "bn_beta": _encode_array_list(params.bn_beta),
            "bn_mean": _encode_array_list(params.bn_mean),
            "bn_var": _encode_array_list(params.bn_var),
        },
        "consolidation": None if state is None else {
            "mode": state.mode,
            "lambda": state.lam,
            "entries": [{
                "task_id": anchor.task_id,
                "theta_star": _encode_tree(anchor.theta_star),
                "fisher": _encode_tree(fisher.values),
                "bn_running": None if anchor.bn_running is None else
                    [_encode_array_list(part) for part in anchor.bn_running],
            } for anchor, fisher in state.entries],
        },
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path: Path) -> tuple[ModelParams, NetConfig,
                                         ConsolidationState | None, dict]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"checkpoint format: expected {CHECKPOINT_FORMAT!r}, "
                         f"got {doc.get('format')!r}")
    net_cfg = NetConfig(**doc["net_config"])
    p = doc["params"]
    params = ModelParams(weights=_decode_array_list(p["weights"]),
                         biases=_decode_array_list(p["biases"]),
                         bn_gamma=_decode_array_list(p["bn_gamma"]),
                         bn_beta=_decode_array_list(p["bn_beta"]),
                         bn_mean=_decode_array_list(p["bn_mean"]),
                         bn_var=_decode_array_list(p["bn_var"]))
    state = None
    c = doc.get("consolidation")
    if c is not None:
        entries = []
        for e in c["entries"]:
            bn = e.get("bn_running")
            bn_running = None if bn is None else tuple(
                _decode_array_list(part) for part in bn)
            entries.append(
                (Anchor(task_id=e["task_id"],
                        theta_star=_decode_tree(e["theta_star"]),
                        bn_running=bn_running),
                 FisherDiagonal(task_id=e["task_id"],
                                values=_decode_tree(e["fisher"]))))
        state = ConsolidationState(mode=c["mode"], lam=c["lambda"],
                                   entries=tuple(entries))
    return params, net_cfg, state, doc.get("extra", {})
