"""Versioned JSON checkpoints with bit-exact array round-trips.

Arrays are serialized as base64 of their raw little-endian float64 bytes
with explicit shapes, inside a canonical JSON envelope (sorted keys, no
whitespace), so save -> load -> save is byte-identical.  The envelope
records the model dimensions, the concatenation layout, and the run seed;
optimizer and trainer state ride along for resumable training.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import PietspError
from .model import CONCAT_LAYOUT, PARAM_SLOTS, ModelParams
from .optim import AdamState

FORMAT_VERSION = 1


class CheckpointError(PietspError):
    """Checkpoint file missing, corrupt, or inconsistent with its own metadata."""


def _encode_array(arr: np.ndarray) -> dict:
    if arr.dtype != np.float64:
        raise CheckpointError(f"checkpoints store float64 arrays, got {arr.dtype}")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(slot: str, obj) -> np.ndarray:
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise CheckpointError(f"slot '{slot}': malformed array record")
    shape = tuple(int(s) for s in obj["shape"])
    try:
        raw = base64.b64decode(obj["data"], validate=True)
    except Exception as exc:
        raise CheckpointError(f"slot '{slot}': corrupt base64 payload") from exc
    expected = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
    if len(raw) != expected:
        raise CheckpointError(
            f"slot '{slot}': payload holds {len(raw)} bytes but shape {shape} needs {expected}"
        )
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def _encode_params(params: ModelParams) -> dict:
    return {name: _encode_array(arr) for name, arr in params.slots()}


def _decode_params(obj) -> ModelParams:
    if not isinstance(obj, dict):
        raise CheckpointError("parameter table missing")
    missing = [s for s in PARAM_SLOTS if s not in obj]
    if missing:
        raise CheckpointError(f"parameter table missing slots: {missing}")
    return ModelParams(**{slot: _decode_array(slot, obj[slot]) for slot in PARAM_SLOTS})


@dataclass
class Checkpoint:
    params: ModelParams
    seed: int | None
    config: dict | None
    opt_state: AdamState | None
    train_state: dict | None   # epoch, best_metric, best_epoch, bad_epochs, best_params


def checkpoint_bytes(
    params: ModelParams,
    seed: int | None = None,
    config: dict | None = None,
    opt_state: AdamState | None = None,
    train_state: dict | None = None,
) -> bytes:
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": "pietsp-checkpoint",
        "vocab_size": params.vocab_size,
        "dim": params.dim,
        "k_max": params.k_max,
        "concat_layout": CONCAT_LAYOUT,
        "seed": seed,
        "config": config,
        "params": _encode_params(params),
        "optimizer": None
        if opt_state is None
        else {
            "step": opt_state.step,
            "m": _encode_params(opt_state.m),
            "v": _encode_params(opt_state.v),
        },
        "trainer": None
        if train_state is None
        else {
            **{k: v for k, v in train_state.items() if k != "best_params"},
            "best_params": None
            if train_state.get("best_params") is None
            else _encode_params(train_state["best_params"]),
        },
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, params: ModelParams, **kwargs) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, **kwargs))


def load_checkpoint(path) -> Checkpoint:
    try:
        payload = json.loads(Path(path).read_bytes())
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    if payload.get("kind") != "pietsp-checkpoint":
        raise CheckpointError(f"{path}: not a checkpoint file")
    if payload.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {payload.get('format_version')} unsupported (expected {FORMAT_VERSION})"
        )
    if payload.get("concat_layout") != CONCAT_LAYOUT:
        raise CheckpointError(f"{path}: unknown concatenation layout {payload.get('concat_layout')!r}")
    params = _decode_params(payload.get("params"))
    for field, value in (("vocab_size", params.vocab_size), ("dim", params.dim), ("k_max", params.k_max)):
        if payload.get(field) != value:
            raise CheckpointError(
                f"{path}: envelope says {field}={payload.get(field)} but arrays imply {value}"
            )
    opt_state = None
    if payload.get("optimizer") is not None:
        opt = payload["optimizer"]
        opt_state = AdamState(step=int(opt["step"]), m=_decode_params(opt.get("m")), v=_decode_params(opt.get("v")))
    train_state = None
    if payload.get("trainer") is not None:
        train_state = dict(payload["trainer"])
        if train_state.get("best_params") is not None:
            train_state["best_params"] = _decode_params(train_state["best_params"])
    return Checkpoint(
        params=params,
        seed=payload.get("seed"),
        config=payload.get("config"),
        opt_state=opt_state,
        train_state=train_state,
    )
