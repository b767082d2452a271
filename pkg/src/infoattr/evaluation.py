"""Faithfulness and sanity metrics: perturbation (deletion / negative-evidence)
curves with trapezoidal AUC, Pearson / Spearman map correlations, and the
randomization sanity-check drivers.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .classifiers import Classifier, train_logistic
from .engine import EngineConfig, ExplanationResult, derive_patch_seed, explain, resolve_classes
from .errors import CorrelationUndefinedError
from .samplers import Sampler
from .types import AttributionMap, Image, build_patch_grid, extract_context


@dataclass(frozen=True, eq=False)
class PerturbationCurve:
    """Tracked-class probability as ranked pixels are progressively replaced.

    Fractions are relative to the *eligible* pixel set: every pixel for a
    standard deletion curve, only the negative-valued pixels when restricted
    negative-evidence removal was requested. They start at 0 and end at 1.
    """

    fractions: np.ndarray
    probabilities: np.ndarray
    order: str  # "descending" (deletion) | "ascending" (negative evidence)
    fill: str
    class_index: int
    eligible_pixels: int
    total_pixels: int

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=np.float64)
        p = np.asarray(self.probabilities, dtype=np.float64)
        if f.shape != p.shape or f.ndim != 1 or f.size < 2:
            raise ValueError("curve needs matching fraction/probability vectors (>= 2 points)")
        if f[0] != 0.0 or abs(f[-1] - 1.0) > 1e-12 or np.any(np.diff(f) <= 0):
            raise ValueError("fractions must rise strictly from 0 to 1")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.order not in ("descending", "ascending"):
            raise ValueError(f"order must be descending or ascending, got {self.order!r}")
        f.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "fractions", f)
        object.__setattr__(self, "probabilities", p)

    def to_csv(self) -> str:
        """Headerless `fraction,probability` rows."""
        buf = io.StringIO()
        for fr, pr in zip(self.fractions, self.probabilities):
            buf.write(f"{float(fr)!r},{float(pr)!r}\n")
        return buf.getvalue()


def _rank_pixels(values: np.ndarray, order: str) -> np.ndarray:
    """Flat pixel indices in removal order; ties broken by row-major index."""
    flat = values.reshape(-1)
    key = -flat if order == "descending" else flat
    return np.argsort(key, kind="stable")


def _resolve_fill(fill, image: Image):
    """Returns (per-channel byte vector | Sampler, description string)."""
    if isinstance(fill, Sampler):
        return fill, f"sampler:{fill.ident}"
    if fill == "mean":
        per_channel = np.rint(image.data.reshape(-1, image.channels).mean(axis=0))
        vec = per_channel.astype(np.uint8)
        return vec, f"mean:{','.join(str(int(v)) for v in vec)}"
    if fill == "gray":
        fill = 128
    if isinstance(fill, str):
        try:
            fill = tuple(int(p) for p in fill.split(","))
        except ValueError:
            raise ValueError(f"fill {fill!r} is not gray/mean, bytes, or a sampler")
    if isinstance(fill, int):
        fill = (fill,) * image.channels
    elif len(fill) == 1:
        fill = tuple(fill) * image.channels
    vec = np.asarray(fill, dtype=np.int64)
    if vec.shape != (image.channels,) or vec.min() < 0 or vec.max() > 255:
        raise ValueError(f"fill {fill!r} is not a byte per channel")
    return vec.astype(np.uint8), ",".join(str(int(v)) for v in vec)


def _sampler_infill(current: np.ndarray, sampler: Sampler,
                    newly: np.ndarray, step_seed: int) -> np.ndarray:
    """Replace newly removed pixels with sampler draws, patch by patch over the
    grid of patches that intersect them."""
    h, w, _ = current.shape
    grid = build_patch_grid(h, w, sampler.k, sampler.k)
    out = current.copy()
    new_mask = np.zeros((h, w), dtype=bool)
    new_mask.reshape(-1)[newly] = True
    for index, (r, c) in enumerate(grid.origins):
        sel = new_mask[r:r + sampler.k, c:c + sampler.k]
        if not sel.any():
            continue
        ctx = extract_context(Image(out), (r, c), sampler.k)
        patch = sampler.sample(ctx, 1, derive_patch_seed(step_seed, index))[0]
        block = out[r:r + sampler.k, c:c + sampler.k]
        block[sel] = patch[sel]
    return out


def perturbation_curve(
    classifier: Classifier,
    image: Image,
    amap: AttributionMap,
    class_index: int,
    order: str = "descending",
    fill="mean",
    steps: int = 100,
    only_negative: bool = False,
    seed: int = 0,
) -> PerturbationCurve:
    """Rank pixels by attribution (descending for deletion, ascending for
    negative-evidence removal), replace them cumulatively in `steps` chunks,
    and record the tracked class's probability after each chunk.

    `fill` is a byte, a per-channel tuple, "gray", "mean" (per-channel image
    mean), or a Sampler used to in-fill removed pixels. With `only_negative`,
    removal is restricted to pixels with negative attribution.
    """
    if (amap.height, amap.width) != (image.height, image.width):
        raise ValueError(
            f"map is {amap.height}x{amap.width}, image is {image.height}x{image.width}"
        )
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if order not in ("descending", "ascending"):
        raise ValueError(f"order must be descending or ascending, got {order!r}")
    fill_value, fill_desc = _resolve_fill(fill, image)

    ranked = _rank_pixels(amap.values, order)
    if only_negative:
        negative = amap.values.reshape(-1) < 0
        ranked = ranked[negative[ranked]]
    total_pixels = image.height * image.width
    eligible = ranked.size

    original = classifier.predict_batch([image])[0]
    fractions = [0.0]
    probs = [float(original.probs[class_index])]
    if eligible == 0:
        # nothing to remove: flat two-point curve
        return PerturbationCurve(
            fractions=np.array([0.0, 1.0]), probabilities=np.array([probs[0], probs[0]]),
            order=order, fill=fill_desc, class_index=class_index,
            eligible_pixels=0, total_pixels=total_pixels,
        )

    counts = sorted({min(eligible, -(-t * eligible // steps)) for t in range(1, steps + 1)})
    current = image.data.copy()
    removed = 0
    states = []
    for step_idx, count in enumerate(counts):
        newly = ranked[removed:count]
        removed = count
        if isinstance(fill_value, Sampler):
            current = _sampler_infill(current, fill_value, newly, derive_patch_seed(seed, step_idx))
        else:
            flat = current.reshape(-1, image.channels)
            flat[newly] = fill_value
            current = flat.reshape(image.data.shape)
        states.append(Image(current.copy()))
        fractions.append(count / eligible)
    preds = classifier.predict_batch(states)
    probs.extend(float(p.probs[class_index]) for p in preds)
    return PerturbationCurve(
        fractions=np.array(fractions), probabilities=np.array(probs),
        order=order, fill=fill_desc, class_index=class_index,
        eligible_pixels=eligible, total_pixels=total_pixels,
    )


def auc(curve: PerturbationCurve) -> float:
    """Trapezoidal area under the probability curve over the fraction axis."""
    f, p = curve.fractions, curve.probabilities
    return float(np.sum(0.5 * np.diff(f) * (p[:-1] + p[1:])))


def _as_values(m) -> np.ndarray:
    arr = m.values if isinstance(m, AttributionMap) else np.asarray(m, dtype=np.float64)
    return arr.reshape(-1).astype(np.float64)


def pearson(a, b) -> float:
    """Pearson correlation of two maps. Constant input raises
    CorrelationUndefinedError rather than silently returning 0."""
    x, y = _as_values(a), _as_values(b)
    if x.shape != y.shape:
        raise ValueError(f"maps differ in size: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("need >= 2 values")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise CorrelationUndefinedError("correlation with a constant map is undefined")
    if np.array_equal(x, y):
        return 1.0
    if np.array_equal(x, -y):
        return -1.0
    dx, dy = x - x.mean(), y - y.mean()
    r = float((dx @ dy) / np.sqrt((dx @ dx) * (dy @ dy)))
    return min(1.0, max(-1.0, r))


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    xs = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x, y = _as_values(a), _as_values(b)
    if x.shape != y.shape:
        raise ValueError(f"maps differ in size: {x.shape} vs {y.shape}")
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise CorrelationUndefinedError("correlation with a constant map is undefined")
    return pearson(_average_ranks(x), _average_ranks(y))


@dataclass(frozen=True)
class SanityRow:
    fraction: float
    pearson_pmi: float
    spearman_pmi: float
    pearson_ig: float
    spearman_ig: float
    per_image: tuple[dict, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class SanityReport:
    mode: str  # "parameter" | "label"
    rows: tuple[SanityRow, ...]
    config: dict

    def to_json_dict(self) -> dict:
        return {
            "format": "infoattr-sanity-v1",
            "mode": self.mode,
            "config": self.config,
            "rows": [
                {
                    "fraction": r.fraction,
                    "pearson_pmi": r.pearson_pmi, "spearman_pmi": r.spearman_pmi,
                    "pearson_ig": r.pearson_ig, "spearman_ig": r.spearman_ig,
                    "per_image": list(r.per_image),
                }
                for r in self.rows
            ],
        }

    def to_csv(self) -> str:
        lines = ["fraction,pearson_pmi,spearman_pmi,pearson_ig,spearman_ig"]
        for r in self.rows:
            lines.append(f"{r.fraction!r},{r.pearson_pmi!r},{r.spearman_pmi!r},"
                         f"{r.pearson_ig!r},{r.spearman_ig!r}")
        return "\n".join(lines) + "\n"


def _compare_maps(
    baselines: list[ExplanationResult], results: list[ExplanationResult]
) -> tuple[float, float, float, float, tuple[dict, ...]]:
    per_image = []
    for base, res in zip(baselines, results):
        c = base.classes[0]
        per_image.append({
            "pearson_pmi": pearson(base.pmi_maps[c], res.pmi_maps[c]),
            "spearman_pmi": spearman(base.pmi_maps[c], res.pmi_maps[c]),
            "pearson_ig": pearson(base.ig_map, res.ig_map),
            "spearman_ig": spearman(base.ig_map, res.ig_map),
        })
    mean = lambda key: float(np.mean([d[key] for d in per_image]))
    return (mean("pearson_pmi"), mean("spearman_pmi"),
            mean("pearson_ig"), mean("spearman_ig"), tuple(per_image))


def sanity_param_randomization(
    classifier_factory: Callable[[float], Classifier],
    sampler: Sampler,
    images: Sequence[Image],
    fractions: Sequence[float],
    config: EngineConfig = EngineConfig(),
    workers: int = 1,
) -> SanityReport:
    """Parameter-randomization sanity check: for each fraction, explain every
    image with the partially randomized classifier and correlate the maps
    against the fraction-0 maps. The explained class is pinned per image to
    the fraction-0 classifier's prediction so PMI maps stay comparable."""
    if not images:
        raise ValueError("need >= 1 image")
    fr = [float(f) for f in fractions]
    if 0.0 not in fr or 1.0 not in fr:
        raise ValueError("fractions must include 0 and 1")

    base_clf = classifier_factory(0.0)
    baselines, pinned = [], []
    for img in images:
        pred = base_clf.predict_batch([img])[0]
        classes = resolve_classes(config.classes, pred)
        cfg = EngineConfig(k=config.k, n_samples=config.n_samples, stride=config.stride,
                           eps=config.eps, log_base=config.log_base, classes=classes,
                           seed=config.seed)
        pinned.append(cfg)
        baselines.append(explain(base_clf, sampler, img, cfg, workers=workers))

    rows = []
    for f in fr:
        if f == 0.0:
            results = baselines
        else:
            clf = classifier_factory(f)
            results = [explain(clf, sampler, img, cfg, workers=workers)
                       for img, cfg in zip(images, pinned)]
        rows.append(SanityRow(f, *_compare_maps(baselines, results)))
    cfg_echo = {"k": config.k, "n": config.n_samples, "stride": config.effective_stride,
                "eps": config.eps, "seed": config.seed, "num_images": len(images),
                "sampler": sampler.ident}
    return SanityReport(mode="parameter", rows=tuple(rows), config=cfg_echo)


def sanity_label_randomization(
    train_images: Sequence[Image],
    train_labels: Sequence[int],
    eval_images: Sequence[Image],
    sampler: Sampler,
    config: EngineConfig = EngineConfig(),
    epochs: int = 200,
    learning_rate: float = 2.0,
    seed: int = 0,
    workers: int = 1,
) -> SanityReport:
    """Label-randomization sanity check: retrain the logistic stand-in on
    shuffled labels and correlate its maps against the true-label model's."""
    rng = np.random.default_rng(seed)
    shuffled = list(train_labels)
    rng.shuffle(shuffled)

    true_model = train_logistic(list(train_images), list(train_labels), epochs, learning_rate, seed)
    rand_model = train_logistic(list(train_images), shuffled, epochs, learning_rate, seed)

    baselines, results = [], []
    for img in eval_images:
        pred = true_model.predict_batch([img])[0]
        classes = resolve_classes(config.classes, pred)
        cfg = EngineConfig(k=config.k, n_samples=config.n_samples, stride=config.stride,
                           eps=config.eps, log_base=config.log_base, classes=classes,
                           seed=config.seed)
        baselines.append(explain(true_model, sampler, img, cfg, workers=workers))
        results.append(explain(rand_model, sampler, img, cfg, workers=workers))
    row = SanityRow(1.0, *_compare_maps(baselines, results))
    cfg_echo = {"k": config.k, "n": config.n_samples, "stride": config.effective_stride,
                "eps": config.eps, "seed": seed, "num_images": len(eval_images),
                "sampler": sampler.ident, "epochs": epochs, "learning_rate": learning_rate}
    return SanityReport(mode="label", rows=(row,), config=cfg_echo)
