"""Black-box classifier abstraction and the built-in desk-scale models.

An in-process classifier is any object exposing `num_classes`, `input_shape`,
`ident` and `predict_batch`. Predictions are evaluated one image at a time so
that batch and single calls are bit-identical regardless of BLAS blocking.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, FormatError
from .types import Image, Prediction

LINEAR_FORMAT_TAG = "infoattr-linear-v1"


class Classifier:
    """Contract: deterministic posterior over >= 2 classes for byte rasters."""

    num_classes: int
    input_shape: tuple[int, int, int]
    ident: str

    def predict_batch(self, images: list[Image]) -> list[Prediction]:
        raise NotImplementedError


def _check_shapes(classifier: Classifier, images: list[Image]):
    for i, img in enumerate(images):
        if img.shape != classifier.input_shape:
            raise ValueError(
                f"image {i} has shape {img.shape}, classifier expects {classifier.input_shape}"
            )


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass(frozen=True, eq=False)
class LinearSoftmaxModel(Classifier):
    """softmax(W x + b) over byte inputs scaled to [0, 1]; the desk-scale
    stand-in for a deep classifier."""

    weights: np.ndarray  # (L, H*W*C)
    bias: np.ndarray  # (L,)
    input_shape: tuple[int, int, int]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        h, wd, c = self.input_shape
        if w.ndim != 2 or w.shape[1] != h * wd * c:
            raise ValueError(f"weights must be (L, {h * wd * c}), got {w.shape}")
        if w.shape[0] < 2:
            raise ValueError("need >= 2 classes")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias must be ({w.shape[0]},), got {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def ident(self) -> str:
        digest = hashlib.sha256(self.weights.tobytes() + self.bias.tobytes()).hexdigest()[:12]
        h, w, c = self.input_shape
        return f"linear:{self.num_classes}c:{h}x{w}x{c}:{digest}"

    def predict_batch(self, images: list[Image]) -> list[Prediction]:
        _check_shapes(self, images)
        out = []
        for img in images:
            x = img.data.reshape(-1).astype(np.float64) / 255.0
            out.append(Prediction(_softmax(self.weights @ x + self.bias)))
        return out


def save_linear_model(model: LinearSoftmaxModel, path) -> None:
    record = {
        "format": LINEAR_FORMAT_TAG,
        "input_shape": list(model.input_shape),
        "num_classes": model.num_classes,
        "W": model.weights.tolist(),
        "b": model.bias.tolist(),
        "normalize": "unit_scale",
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f)


def load_linear_model(path) -> LinearSoftmaxModel:
    try:
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: not a linear-model JSON record ({e})") from e
    if not isinstance(record, dict) or record.get("format") != LINEAR_FORMAT_TAG:
        raise FormatError(f"{path}: expected format tag {LINEAR_FORMAT_TAG!r}")
    for key in ("input_shape", "num_classes", "W", "b", "normalize"):
        if key not in record:
            raise FormatError(f"{path}: missing field {key!r}")
    if record["normalize"] != "unit_scale":
        raise FormatError(f"{path}: unknown normalization {record['normalize']!r}")
    shape = tuple(int(v) for v in record["input_shape"])
    model = LinearSoftmaxModel(
        weights=np.array(record["W"], dtype=np.float64),
        bias=np.array(record["b"], dtype=np.float64),
        input_shape=shape,
    )
    if model.num_classes != int(record["num_classes"]):
        raise FormatError(f"{path}: num_classes disagrees with W rows")
    return model


Rect = tuple[int, int, int, int]  # (top, left, height, width)


def _rect_mean(data: np.ndarray, rect: Rect) -> float:
    t, l, h, w = rect
    return float(np.mean(data[t:t + h, l:l + w], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class QuadrantClassifier(Classifier):
    """Two-class toy with analytically known saliency: the class-1 logit is
    temperature * (mean(region) - mean(inhibit_region)) / 255, class-0 logit 0.
    Pixels outside the two rectangles provably carry no evidence."""

    input_shape: tuple[int, int, int]
    region: Rect
    temperature: float = 8.0
    inhibit_region: Rect | None = None

    def __post_init__(self):
        h, w, _ = self.input_shape
        for rect in (self.region,) + ((self.inhibit_region,) if self.inhibit_region else ()):
            t, l, rh, rw = rect
            if t < 0 or l < 0 or rh < 1 or rw < 1 or t + rh > h or l + rw > w:
                raise ValueError(f"rectangle {rect} leaves the {h}x{w} image")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    num_classes = 2

    @property
    def ident(self) -> str:
        return f"quadrant:r{self.region}:i{self.inhibit_region}:t{self.temperature}"

    def logit(self, image: Image) -> float:
        drive = _rect_mean(image.data, self.region)
        if self.inhibit_region is not None:
            drive -= _rect_mean(image.data, self.inhibit_region)
        return self.temperature * drive / 255.0

    def predict_batch(self, images: list[Image]) -> list[Prediction]:
        _check_shapes(self, images)
        return [Prediction(_softmax(np.array([0.0, self.logit(img)]))) for img in images]


def _cross_entropy(x: np.ndarray, onehot: np.ndarray, w: np.ndarray, b: np.ndarray) -> float:
    z = x @ w.T + b
    z -= z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-(onehot * logp).sum() / x.shape[0])


def train_logistic(
    images: list[Image],
    labels: list[int],
    epochs: int,
    learning_rate: float,
    seed: int,
) -> LinearSoftmaxModel:
    """Full-batch gradient descent on multinomial cross-entropy.

    Each epoch backtracks (halving the step) until the loss does not increase,
    so the training loss is non-increasing at epoch granularity; training stops
    early if no step makes progress. Deterministic given (data, seed).
    """
    if not images:
        raise DegenerateDataError("empty training set")
    shape = images[0].shape
    for img in images:
        if img.shape != shape:
            raise ValueError("training images must share one shape")
    if len(labels) != len(images):
        raise ValueError("one label per image required")
    labels_arr = np.asarray(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise ValueError("labels must be nonnegative class indices")
    num_classes = int(labels_arr.max()) + 1
    if np.unique(labels_arr).size < 2:
        raise DegenerateDataError("training labels contain a single class")

    x = np.stack([img.data.reshape(-1) for img in images]).astype(np.float64) / 255.0
    onehot = np.zeros((len(images), num_classes))
    onehot[np.arange(len(images)), labels_arr] = 1.0

    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.01, size=(num_classes, x.shape[1]))
    b = np.zeros(num_classes)

    loss = _cross_entropy(x, onehot, w, b)
    for _ in range(epochs):
        z = x @ w.T + b
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        grad_w = (p - onehot).T @ x / x.shape[0]
        grad_b = (p - onehot).mean(axis=0)

        step = learning_rate
        improved = False
        while step >= 1e-12:
            w2 = w - step * grad_w
            b2 = b - step * grad_b
            new_loss = _cross_entropy(x, onehot, w2, b2)
            if new_loss <= loss:
                w, b, loss = w2, b2, new_loss
                improved = True
                break
            step *= 0.5
        if not improved:
            break
    return LinearSoftmaxModel(weights=w, bias=b, input_shape=shape)


def randomize_parameters(
    model: LinearSoftmaxModel, fraction: float, seed: int
) -> LinearSoftmaxModel:
    """Replace the first ceil(fraction * L) output rows of W (and their bias
    entries) with draws from normal(0, std of the original row) - the
    single-layer analogue of randomizing a network from the top down."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    rows = math.ceil(fraction * model.num_classes)
    if rows == 0:
        return model
    rng = np.random.default_rng(seed)
    w = model.weights.copy()
    b = model.bias.copy()
    for i in range(rows):
        std = float(w[i].std())
        w[i] = rng.normal(0.0, std, size=w.shape[1])
        b[i] = rng.normal(0.0, std)
    return LinearSoftmaxModel(weights=w, bias=b, input_shape=model.input_shape)
