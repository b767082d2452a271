"""Independent brute-force references for the test suite.

Everything here is deliberately naive (plain Python loops, no shared helpers
with the library) so the two routes have independent failure modes. Scene
supports stay tiny so exhaustive marginalization runs in well under a second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from infoattr import Image, Sampler, extract_context

MAX_ORACLE_OUTCOMES = 10_000


def oracle_kl(p, q) -> float:
    """Straight-summation KL divergence in bits; requires strictly positive q
    wherever p > 0."""
    total = 0.0
    for pi, qi in zip(list(p), list(q)):
        pi, qi = float(pi), float(qi)
        if pi > 0.0:
            total += pi * math.log2(pi / qi)
    return total


def naive_pearson(xs, ys) -> float:
    xs = [float(v) for v in np.asarray(xs).reshape(-1)]
    ys = [float(v) for v in np.asarray(ys).reshape(-1)]
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def naive_ranks(xs) -> list[float]:
    xs = [float(v) for v in np.asarray(xs).reshape(-1)]
    order = sorted(range(len(xs)), key=lambda i: (xs[i], i))
    ranks = [0.0] * len(xs)
    i = 0
    while i < len(xs):
        j = i
        while j + 1 < len(xs) and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def naive_spearman(xs, ys) -> float:
    return naive_pearson(naive_ranks(xs), naive_ranks(ys))


def make_linear_fn(weights: np.ndarray, bias: np.ndarray) -> Callable[[np.ndarray], list[float]]:
    """Closed-form softmax(W x/255 + b) evaluated with plain Python loops."""
    w_rows = [list(map(float, row)) for row in weights]
    b_vals = [float(v) for v in bias]

    def fn(arr: np.ndarray) -> list[float]:
        flat = [float(v) / 255.0 for v in arr.reshape(-1)]
        logits = []
        for row, bv in zip(w_rows, b_vals):
            logits.append(sum(wi * xi for wi, xi in zip(row, flat)) + bv)
        top = max(logits)
        exps = [math.exp(z - top) for z in logits]
        total = sum(exps)
        return [e / total for e in exps]

    return fn


class TableSampler(Sampler):
    """Enumerable sampler with an explicit support table keyed by context
    bytes; the test constructs the outcomes and probabilities by hand."""

    def __init__(self, k: int, channels: int, table: dict[bytes, list[tuple[np.ndarray, float]]]):
        self.k = k
        self.channels = channels
        self.enumerable = True
        self.ident = "table"
        self._table = table

    def _lookup(self, context):
        key = context.values.tobytes()
        if key not in self._table:
            raise KeyError("context not in table")
        return self._table[key]

    def sample(self, context, n: int, seed: int) -> np.ndarray:
        self._check(context, n)
        outcomes = self._lookup(context)
        probs = np.array([p for _, p in outcomes])
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(outcomes), size=n, p=probs / probs.sum())
        return np.stack([outcomes[i][0] for i in idx])

    def support(self, context):
        self._check(context, 1)
        return [(patch.copy(), prob) for patch, prob in self._lookup(context)]


class IdentitySampler(Sampler):
    """Always returns the patch being explained (reads the retained center
    bytes); the null perturbation."""

    def __init__(self, k: int, channels: int):
        self.k = k
        self.channels = channels
        self.enumerable = True
        self.ident = "identity"

    def sample(self, context, n: int, seed: int) -> np.ndarray:
        self._check(context, n)
        return np.tile(context.center(), (n, 1, 1, 1))

    def support(self, context):
        self._check(context, 1)
        return [(np.array(context.center()), 1.0)]


@dataclass(frozen=True, eq=False)
class ToyScene:
    """Fully enumerable scene: image <= 8x8, support <= 16 outcomes per patch,
    closed-form classifier. `support` maps patch origin -> raw outcome table;
    `classifier_fn` is the loop-based reference predictor."""

    image: Image
    k: int
    origins: tuple[tuple[int, int], ...]
    support: dict  # origin -> list[(patch ndarray, prob float)]
    sampler: Sampler
    classifier: object  # engine-side Classifier
    classifier_fn: Callable[[np.ndarray], list[float]]


def oracle_marginal(scene: ToyScene, origin: tuple[int, int]) -> list[float]:
    """Exhaustive probability-weighted marginal, all plain loops."""
    outcomes = scene.support[origin]
    if len(outcomes) > MAX_ORACLE_OUTCOMES:
        raise ValueError(f"support of {len(outcomes)} outcomes is too large for the oracle")
    r0, c0 = origin
    total = None
    for patch, prob in outcomes:
        arr = scene.image.data.copy()
        for dr in range(scene.k):
            for dc in range(scene.k):
                for ch in range(arr.shape[2]):
                    arr[r0 + dr, c0 + dc, ch] = patch[dr, dc, ch]
        probs = scene.classifier_fn(arr)
        if total is None:
            total = [prob * v for v in probs]
        else:
            total = [t + prob * v for t, v in zip(total, probs)]
    return total


def make_toy_scene(rng: np.random.Generator, num_classes: int = 2) -> ToyScene:
    """Random 6x6 single-channel scene with a K in {2, 3}, random linear
    classifier, and a hand-built support of 2..16 outcomes per patch."""
    from infoattr import LinearSoftmaxModel, build_patch_grid

    k = int(rng.choice([2, 3]))
    image = Image(rng.integers(0, 256, size=(6, 6, 1), dtype=np.uint8))
    weights = rng.normal(0.0, 1.5, size=(num_classes, 36))
    bias = rng.normal(0.0, 0.2, size=num_classes)
    classifier = LinearSoftmaxModel(weights=weights, bias=bias, input_shape=(6, 6, 1))

    grid = build_patch_grid(6, 6, k, k)
    table = {}
    support = {}
    for origin in grid.origins:
        ctx = extract_context(image, origin, k)
        count = int(rng.integers(2, 17))
        raw = rng.random(count) + 0.05
        probs = (raw / raw.sum()).tolist()
        # make probabilities sum to exactly 1.0 by construction
        probs[-1] = 1.0 - sum(probs[:-1])
        outcomes = [
            (rng.integers(0, 256, size=(k, k, 1), dtype=np.uint8), float(p))
            for p in probs
        ]
        table[ctx.values.tobytes()] = outcomes
        support[origin] = outcomes
    sampler = TableSampler(k=k, channels=1, table=table)
    return ToyScene(
        image=image, k=k, origins=grid.origins, support=support,
        sampler=sampler, classifier=classifier,
        classifier_fn=make_linear_fn(weights, bias),
    )
