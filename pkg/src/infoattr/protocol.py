"""Newline-delimited JSON wire protocol for out-of-process classifiers and
samplers, over a subprocess's standard streams or a TCP stream.

Framing: one UTF-8 JSON object per line. Requests carry strictly increasing
integer ids; the peer answers every request exactly once, echoing the id.
Error responses are `{"id": <int>, "error": "<message>"}`.

Classifier ops:
  {"id":i,"op":"info"} ->
      {"id":i,"num_classes":L,"height":H,"width":W,"channels":C,"labels":[...]?}
  {"id":i,"op":"predict","shape":[B,H,W,C],"data":"<base64 raw bytes>"} ->
      {"id":i,"probs":[[...]*B]}

Sampler ops:
  {"id":i,"op":"info"} -> {"id":i,"K":K,"channels":C,"enumerable":false}
  {"id":i,"op":"sample","n":n,"seed":s,"context_shape":[3K,3K,C],
   "context":"<base64>","mask_origin":[K,K]} -> {"id":i,"patches":"<base64>"}
"""

from __future__ import annotations

import base64
import json
import os
import selectors
import shlex
import socket
import subprocess
import threading
import time

import numpy as np

from .classifiers import Classifier
from .errors import ProtocolError
from .samplers import Sampler
from .types import ContextWindow, Image, Prediction

DEFAULT_TIMEOUT = 30.0


class _SubprocessTransport:
    def __init__(self, command: str | list[str]):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.describe = " ".join(argv)
        try:
            self.proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, bufsize=0
            )
        except OSError as e:
            raise ProtocolError(f"cannot start peer {self.describe!r}: {e}") from e
        self._buf = b""
        self._sel = selectors.DefaultSelector()
        self._sel.register(self.proc.stdout, selectors.EVENT_READ)

    def send_line(self, line: str):
        try:
            self.proc.stdin.write(line.encode("utf-8") + b"\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as e:
            raise ProtocolError(f"peer {self.describe!r} closed its input: {e}") from e

    def recv_line(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line, self._buf = self._buf[:nl], self._buf[nl + 1:]
                return line.decode("utf-8")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProtocolError(f"timeout after {timeout}s waiting for {self.describe!r}")
            if not self._sel.select(remaining):
                continue
            chunk = os.read(self.proc.stdout.fileno(), 1 << 16)
            if chunk == b"":
                raise ProtocolError(f"peer {self.describe!r} closed the stream mid-conversation")
            self._buf += chunk

    def close(self):
        try:
            self._sel.close()
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()
        finally:
            if self.proc.stdout:
                self.proc.stdout.close()


class _TcpTransport:
    def __init__(self, address: str):
        host, _, port = address.rpartition(":")
        self.describe = address
        try:
            self.sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=10.0)
        except (OSError, ValueError) as e:
            raise ProtocolError(f"cannot connect to {address!r}: {e}") from e
        self._buf = b""

    def send_line(self, line: str):
        try:
            self.sock.sendall(line.encode("utf-8") + b"\n")
        except OSError as e:
            raise ProtocolError(f"send to {self.describe!r} failed: {e}") from e

    def recv_line(self, timeout: float) -> str:
        deadline = time.monotonic() + timeout
        while True:
            nl = self._buf.find(b"\n")
            if nl >= 0:
                line, self._buf = self._buf[:nl], self._buf[nl + 1:]
                return line.decode("utf-8")
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ProtocolError(f"timeout after {timeout}s waiting for {self.describe!r}")
            self.sock.settimeout(remaining)
            try:
                chunk = self.sock.recv(1 << 16)
            except socket.timeout:
                continue
            except OSError as e:
                raise ProtocolError(f"recv from {self.describe!r} failed: {e}") from e
            if chunk == b"":
                raise ProtocolError(f"peer {self.describe!r} closed the connection")
            self._buf += chunk

    def close(self):
        try:
            self.sock.close()
        except OSError:
            pass


def _open_transport(spec: str | list[str]):
    if isinstance(spec, list):
        return _SubprocessTransport(spec)
    if spec.startswith("exec:"):
        return _SubprocessTransport(spec[len("exec:"):])
    if spec.startswith("tcp:"):
        return _TcpTransport(spec[len("tcp:"):])
    raise ValueError(f"transport spec must be 'exec:<command>' or 'tcp:<host:port>', got {spec!r}")


class WireClient:
    """Serializes id-matched request/response pairs over a line transport;
    safe to call from multiple threads."""

    def __init__(self, transport, timeout: float = DEFAULT_TIMEOUT):
        self._transport = transport
        self._timeout = timeout
        self._lock = threading.Lock()
        self._next_id = 0
        self.describe = transport.describe

    def request(self, op: str, **fields) -> dict:
        with self._lock:
            self._next_id += 1
            msg_id = self._next_id
            self._transport.send_line(json.dumps({"id": msg_id, "op": op, **fields}))
            raw = self._transport.recv_line(self._timeout)
        try:
            response = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ProtocolError(f"malformed response to message {msg_id}: {raw[:200]!r}") from e
        if not isinstance(response, dict) or response.get("id") != msg_id:
            raise ProtocolError(
                f"response id {response.get('id') if isinstance(response, dict) else None} "
                f"does not match request id {msg_id}"
            )
        if "error" in response:
            raise ProtocolError(f"peer error for message {msg_id}: {response['error']}")
        return response

    def close(self):
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


class ExternalClassifier(Classifier):
    """Classifier living behind the wire protocol; shape and class count come
    from the peer's `info` answer."""

    def __init__(self, client: WireClient):
        self._client = client
        info = client.request("info")
        try:
            self.num_classes = int(info["num_classes"])
            self.input_shape = (int(info["height"]), int(info["width"]), int(info["channels"]))
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"invalid info response: {info}") from e
        if self.num_classes < 2:
            raise ProtocolError(f"peer reports num_classes={self.num_classes}, need >= 2")
        h, w, c = self.input_shape
        if h < 1 or w < 1 or c not in (1, 3):
            raise ProtocolError(f"peer reports impossible input shape {self.input_shape}")
        self.labels = info.get("labels")
        self.ident = f"external:{client.describe}"

    def predict_batch(self, images: list[Image]) -> list[Prediction]:
        for i, img in enumerate(images):
            if img.shape != self.input_shape:
                raise ValueError(f"image {i} has shape {img.shape}, peer expects {self.input_shape}")
        if not images:
            return []
        h, w, c = self.input_shape
        data = b"".join(img.data.tobytes() for img in images)
        response = self._client.request(
            "predict", shape=[len(images), h, w, c], data=_b64(data)
        )
        msg_id = response.get("id")
        probs = response.get("probs")
        if not isinstance(probs, list) or len(probs) != len(images):
            raise ProtocolError(f"message {msg_id}: expected {len(images)} probability rows")
        out = []
        for row_idx, row in enumerate(probs):
            arr = np.asarray(row, dtype=np.float64)
            if arr.shape != (self.num_classes,) or not np.all(np.isfinite(arr)):
                raise ProtocolError(f"message {msg_id}: row {row_idx} is not a valid distribution")
            if np.any(arr < -1e-9):
                raise ProtocolError(f"message {msg_id}: row {row_idx} has negative probabilities")
            total = float(arr.sum())
            if abs(total - 1.0) > 1e-4:
                raise ProtocolError(
                    f"message {msg_id}: row {row_idx} sums to {total}, outside 1 +/- 1e-4"
                )
            out.append(Prediction(np.maximum(arr, 0.0) / max(total, 1e-300)))
        return out

    def close(self):
        self._client.close()


class ExternalSampler(Sampler):
    """Sampler behind the wire protocol (how a learned neural patch model plugs
    in). The protocol exposes sampling only, so enumerable is always False."""

    def __init__(self, client: WireClient):
        self._client = client
        info = client.request("info")
        try:
            self.k = int(info["K"])
            self.channels = int(info["channels"])
        except (KeyError, TypeError, ValueError) as e:
            raise ProtocolError(f"invalid sampler info response: {info}") from e
        if self.k < 1 or self.channels not in (1, 3):
            raise ProtocolError(f"peer reports impossible sampler geometry: {info}")
        self.enumerable = False
        self.ident = f"external-sampler:{client.describe}"

    def sample(self, context: ContextWindow, n: int, seed: int) -> np.ndarray:
        self._check(context, n)
        k, c = self.k, self.channels
        response = self._client.request(
            "sample",
            n=n,
            seed=seed,
            context_shape=[3 * k, 3 * k, c],
            context=_b64(context.values.tobytes()),
            mask_origin=[k, k],
        )
        msg_id = response.get("id")
        try:
            raw = base64.b64decode(response["patches"], validate=True)
        except (KeyError, ValueError, TypeError) as e:
            raise ProtocolError(f"message {msg_id}: missing or invalid patches payload") from e
        if len(raw) != n * k * k * c:
            raise ProtocolError(
                f"message {msg_id}: expected {n * k * k * c} patch bytes, got {len(raw)}"
            )
        return np.frombuffer(raw, dtype=np.uint8).reshape(n, k, k, c).copy()

    def close(self):
        self._client.close()


def connect_external(transport: str | list[str], timeout: float = DEFAULT_TIMEOUT) -> ExternalClassifier:
    """Open a classifier connection: 'exec:<command>' spawns a subprocess peer,
    'tcp:<host:port>' dials a listener, a list is used as argv directly."""
    return ExternalClassifier(WireClient(_open_transport(transport), timeout))


def connect_external_sampler(transport: str | list[str], timeout: float = DEFAULT_TIMEOUT) -> ExternalSampler:
    return ExternalSampler(WireClient(_open_transport(transport), timeout))
