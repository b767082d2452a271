"""Reference external-classifier adapter.

Serves a model over the newline-delimited JSON classifier protocol on standard
streams: `{"id":i,"op":"info"}` and `{"id":i,"op":"predict","shape":[B,H,W,C],
"data":"<base64>"}` requests, one response per request in arrival order, ids
echoed. Malformed input produces an error response (id -1 when the request id
itself is unreadable); the loop never crashes on bad input.

Two model sources:
  * a linear-model JSON file (format tag `infoattr-linear-v1`): softmax of
    W x + b over bytes scaled to [0, 1];
  * a plugin hook `module:function`, where the function takes one uint8 batch
    tensor (B, H, W, C) and returns probability rows (B, num_classes); shape
    and class count are declared on the command line.

Probability rows are renormalized to sum to 1 within 1e-9 before sending, so
tiny floating-point drift in the wrapped runtime never violates the protocol.
"""

from __future__ import annotations

import base64
import importlib
import json
import sys
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__version__ = "0.1.0"

LINEAR_FORMAT_TAG = "infoattr-linear-v1"


@dataclass(frozen=True)
class AdapterConfig:
    predict: Callable[[np.ndarray], np.ndarray]  # uint8 (B,H,W,C) -> (B,L) rows
    input_shape: tuple[int, int, int]
    num_classes: int
    labels: Sequence[str] | None = None

    def __post_init__(self):
        h, w, c = self.input_shape
        if h < 1 or w < 1 or c not in (1, 3):
            raise ValueError(f"impossible input shape {self.input_shape}")
        if self.num_classes < 2:
            raise ValueError("need >= 2 classes")


def load_linear_config(path: str) -> AdapterConfig:
    """Wrap a linear-model JSON record (shared with the attribution engine)."""
    with open(path, "r", encoding="utf-8") as f:
        record = json.load(f)
    if record.get("format") != LINEAR_FORMAT_TAG:
        raise ValueError(f"{path}: expected format tag {LINEAR_FORMAT_TAG!r}")
    if record.get("normalize") != "unit_scale":
        raise ValueError(f"{path}: unknown normalization {record.get('normalize')!r}")
    weights = np.array(record["W"], dtype=np.float64)
    bias = np.array(record["b"], dtype=np.float64)
    shape = tuple(int(v) for v in record["input_shape"])
    if weights.shape != (int(record["num_classes"]), shape[0] * shape[1] * shape[2]):
        raise ValueError(f"{path}: weight shape disagrees with input_shape/num_classes")

    def predict(batch: np.ndarray) -> np.ndarray:
        x = batch.reshape(batch.shape[0], -1).astype(np.float64) / 255.0
        z = x @ weights.T + bias
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    return AdapterConfig(predict=predict, input_shape=shape,
                         num_classes=weights.shape[0], labels=record.get("labels"))


def load_plugin_config(spec: str, input_shape, num_classes: int,
                       labels=None) -> AdapterConfig:
    """Resolve `module:function` and wrap it; the function maps one uint8
    batch tensor to probability rows."""
    module_name, _, func_name = spec.partition(":")
    if not module_name or not func_name:
        raise ValueError(f"plugin spec must be module:function, got {spec!r}")
    fn = getattr(importlib.import_module(module_name), func_name)
    return AdapterConfig(predict=fn, input_shape=tuple(input_shape),
                         num_classes=num_classes, labels=labels)


def _error(msg_id, message: str) -> dict:
    return {"id": msg_id, "error": str(message)}


def handle_request(config: AdapterConfig, line: str) -> dict:
    """One protocol request -> one response object; never raises."""
    try:
        request = json.loads(line)
    except json.JSONDecodeError as e:
        return _error(-1, f"unparseable request: {e}")
    if not isinstance(request, dict):
        return _error(-1, "request must be a JSON object")
    msg_id = request.get("id")
    if not isinstance(msg_id, int):
        return _error(-1, "request id missing or not an integer")
    try:
        op = request.get("op")
        if op == "info":
            h, w, c = config.input_shape
            response = {"id": msg_id, "num_classes": config.num_classes,
                        "height": h, "width": w, "channels": c}
            if config.labels is not None:
                response["labels"] = list(config.labels)
            return response
        if op == "predict":
            return _predict(config, msg_id, request)
        return _error(msg_id, f"unknown op {op!r}")
    except Exception as e:  # protocol guarantee: answer, never crash
        return _error(msg_id, f"{type(e).__name__}: {e}")


def _predict(config: AdapterConfig, msg_id: int, request: dict) -> dict:
    shape = request.get("shape")
    if (not isinstance(shape, list) or len(shape) != 4
            or not all(isinstance(v, int) and v >= 0 for v in shape)):
        return _error(msg_id, f"predict shape must be [B,H,W,C], got {shape!r}")
    batch_size, h, w, c = shape
    if (h, w, c) != config.input_shape:
        return _error(msg_id, f"shape {(h, w, c)} does not match model {config.input_shape}")
    try:
        raw = base64.b64decode(request.get("data", ""), validate=True)
    except Exception as e:
        return _error(msg_id, f"data is not valid base64: {e}")
    if len(raw) != batch_size * h * w * c:
        return _error(msg_id, f"expected {batch_size * h * w * c} bytes, got {len(raw)}")
    batch = np.frombuffer(raw, dtype=np.uint8).reshape(batch_size, h, w, c)

    rows = np.asarray(config.predict(batch), dtype=np.float64)
    if rows.shape != (batch_size, config.num_classes):
        return _error(msg_id, f"model returned shape {rows.shape}, "
                              f"expected {(batch_size, config.num_classes)}")
    if not np.all(np.isfinite(rows)) or np.any(rows < 0):
        return _error(msg_id, "model returned non-finite or negative probabilities")
    sums = rows.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        return _error(msg_id, "model returned an all-zero probability row")
    rows = rows / sums  # renormalize: sent rows sum to 1 within 1e-9
    return {"id": msg_id, "probs": rows.tolist()}


def serve(config: AdapterConfig, stdin=None, stdout=None) -> None:
    """Answer requests line by line until end-of-input."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        response = handle_request(config, line)
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()
