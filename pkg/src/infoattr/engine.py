"""Attribution core: marginalize each patch under a conditional sampler and
score the prediction shift in bits.

For a patch x_i of image x with original posterior p(Y|x):

  marginal      p(Y | x without x_i) ~= (1/N) sum of p(Y | x with sampled patch)
  pmi per class log((p_full + eps) / (p_marg + eps)), positive = evidence for
  ig per patch  sum_c p_full[c] * pmi_c  (= KL(full || marginal) at eps=0)

The numerator of the PMI ratio is always the prediction for the ORIGINAL
image, never a re-predicted sample mean. Per-patch seeds are derived from
(config.seed, patch index), so results are independent of worker scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .classifiers import Classifier
from .errors import EngineError, UnsupportedOracleError
from .samplers import Sampler
from .types import (
    AttributionMap,
    Image,
    PatchGrid,
    Prediction,
    accumulate_patch_values,
    apply_patch,
    build_patch_grid,
    extract_context,
)


@dataclass(frozen=True)
class EngineConfig:
    """Attribution hyperparameters. Defaults: K=8 patches, N=8 Monte-Carlo
    samples, exact tiling (stride=K), eps=1e-13 inside the log, log base 2
    (values in bits), PMI for the top-1 class."""

    k: int = 8
    n_samples: int = 8
    stride: int | None = None
    eps: float = 1e-13
    log_base: float = 2.0
    classes: str | tuple[int, ...] = "top:1"
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.n_samples < 1:
            raise ValueError("N must be >= 1")
        st = self.k if self.stride is None else self.stride
        if not 1 <= st <= self.k:
            raise ValueError(f"stride must be in [1, K={self.k}], got {st}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.log_base <= 0 or self.log_base == 1.0:
            raise ValueError("log base must be positive and != 1")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")
        if isinstance(self.classes, str):
            parse_class_spec(self.classes)  # validate early
        else:
            object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
            if not self.classes:
                raise ValueError("explicit class list must be non-empty")

    @property
    def effective_stride(self) -> int:
        return self.k if self.stride is None else self.stride


def parse_class_spec(spec: str) -> int:
    if not spec.startswith("top:"):
        raise ValueError(f"class spec must be 'top:<k>' or explicit indices, got {spec!r}")
    k = int(spec[len("top:"):])
    if k < 1:
        raise ValueError("top:<k> needs k >= 1")
    return k


def resolve_classes(classes: str | tuple[int, ...], prediction: Prediction) -> tuple[int, ...]:
    """Materialize a class spec against a concrete prediction."""
    if isinstance(classes, str):
        return tuple(prediction.top(parse_class_spec(classes)))
    seen, out = set(), []
    for c in classes:
        if not 0 <= c < prediction.num_classes:
            raise ValueError(f"class {c} out of range for {prediction.num_classes} classes")
        if c not in seen:
            seen.add(c)
            out.append(int(c))
    return tuple(out)


def derive_patch_seed(seed: int, patch_index: int) -> int:
    """Stable per-patch seed; decouples determinism from execution order."""
    return int(np.random.SeedSequence([seed, patch_index]).generate_state(1, np.uint64)[0])


def pmi(p_full, p_marg, eps: float, log_base: float = 2.0):
    """Point-wise mutual information log((p_full+eps)/(p_marg+eps)); eps > 0
    keeps it finite for zero probabilities and makes pmi(p, p) exactly 0.
    Accepts scalars or arrays elementwise."""
    val = np.log2((np.asarray(p_full, dtype=np.float64) + eps)
                  / (np.asarray(p_marg, dtype=np.float64) + eps))
    if log_base != 2.0:
        val = val / math.log2(log_base)
    if np.ndim(p_full) == 0 and np.ndim(p_marg) == 0:
        return float(val)
    return val


def ig(full_pred, marg_pred, eps: float, log_base: float = 2.0) -> float:
    """Information gain: expectation of the per-class PMI under the original
    prediction. Equals KL(full || marginal) in bits when eps=0 and both are
    strictly positive; never dips below -1e-9 for eps <= 1e-13 and L <= 1e4."""
    full = full_pred.probs if isinstance(full_pred, Prediction) else np.asarray(full_pred, np.float64)
    marg = marg_pred.probs if isinstance(marg_pred, Prediction) else np.asarray(marg_pred, np.float64)
    if full.shape != marg.shape:
        raise ValueError(f"distribution lengths differ: {full.shape} vs {marg.shape}")
    return float(full @ pmi(full, marg, eps, log_base))


@dataclass(frozen=True, eq=False)
class PatchRecord:
    """Raw per-patch outcome: marginal posterior, PMI for every class, IG."""

    index: int
    origin: tuple[int, int]
    marginal: np.ndarray
    pmi: np.ndarray
    ig: float


@dataclass(frozen=True, eq=False)
class ExplanationResult:
    original_prediction: Prediction
    classes: tuple[int, ...]
    pmi_maps: dict[int, AttributionMap]
    ig_map: AttributionMap
    patch_table: tuple[PatchRecord, ...]
    grid: PatchGrid


def _mean_probs(rows: np.ndarray) -> np.ndarray:
    """Mean over sampled predictions, exact when all rows are identical (an
    identity sampler must yield the original prediction bit-for-bit)."""
    if np.array_equal(rows, np.broadcast_to(rows[0], rows.shape)):
        return rows[0].copy()
    # contiguous-axis reduction gets numpy's pairwise summation
    return np.mean(np.ascontiguousarray(rows.T), axis=1)


def marginal_prediction(
    classifier: Classifier,
    sampler: Sampler,
    image: Image,
    origin: tuple[int, int],
    n: int,
    seed: int,
) -> Prediction:
    """Monte-Carlo marginal: average posterior over n sampled replacements of
    the patch at `origin`, evaluated as one classifier batch."""
    context = extract_context(image, origin, sampler.k)
    patches = sampler.sample(context, n, seed)
    perturbed = [apply_patch(image, origin, patches[i]) for i in range(n)]
    preds = classifier.predict_batch(perturbed)
    mean = _mean_probs(np.stack([p.probs for p in preds]))
    return Prediction(mean)


def exact_marginal_prediction(
    classifier: Classifier, sampler: Sampler, image: Image, origin: tuple[int, int]
) -> Prediction:
    """Full marginalization over an enumerable sampler's support."""
    context = extract_context(image, origin, sampler.k)
    support = sampler.support(context)
    if support is None:
        raise UnsupportedOracleError(
            f"sampler {getattr(sampler, 'ident', type(sampler).__name__)} is not enumerable"
        )
    perturbed = [apply_patch(image, origin, patch) for patch, _ in support]
    preds = classifier.predict_batch(perturbed)
    total = np.zeros(classifier.num_classes)
    for (_, prob), pred in zip(support, preds):
        total += prob * pred.probs
    return Prediction(total)


def _patch_job(classifier, sampler, image, origin, config, full_probs, index):
    seed_i = derive_patch_seed(config.seed, index)
    marg = marginal_prediction(classifier, sampler, image, origin, config.n_samples, seed_i)
    pmi_all = pmi(full_probs, marg.probs, config.eps, config.log_base)
    ig_val = float(full_probs @ pmi_all)
    return PatchRecord(index=index, origin=origin, marginal=marg.probs, pmi=pmi_all, ig=ig_val)


def explain(
    classifier: Classifier,
    sampler: Sampler,
    image: Image,
    config: EngineConfig = EngineConfig(),
    workers: int = 1,
) -> ExplanationResult:
    """Per-patch marginalization over the whole image: one PMI map per
    requested class plus the class-independent IG map. Patch values are
    distributed uniformly over patch pixels (mean where patches overlap).
    Output is bit-identical for any worker count."""
    if image.shape != classifier.input_shape:
        raise ValueError(f"image shape {image.shape} != classifier {classifier.input_shape}")
    if sampler.k != config.k:
        raise ValueError(f"sampler K={sampler.k} != config K={config.k}")
    original = classifier.predict_batch([image])[0]
    classes = resolve_classes(config.classes, original)
    grid = build_patch_grid(image.height, image.width, config.k, config.effective_stride)
    full_probs = original.probs

    def run(index_origin):
        index, origin = index_origin
        try:
            return _patch_job(classifier, sampler, image, origin, config, full_probs, index)
        except Exception as e:
            raise EngineError(f"patch {index} at origin {origin}: {e}") from e

    jobs = list(enumerate(grid.origins))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(j) for j in jobs]

    meta = {
        "k": config.k, "n": config.n_samples, "stride": config.effective_stride,
        "eps": config.eps, "seed": config.seed, "log_base": config.log_base,
        "sampler": sampler.ident, "classifier": classifier.ident,
    }
    pmi_maps = {}
    for c in classes:
        values = accumulate_patch_values(
            grid, np.array([r.pmi[c] for r in records]), image.height, image.width
        )
        pmi_maps[c] = AttributionMap(kind="pmi", values=values, class_index=c,
                                     meta={**meta, "class": c})
    ig_values = accumulate_patch_values(
        grid, np.array([r.ig for r in records]), image.height, image.width
    )
    ig_map = AttributionMap(kind="ig", values=ig_values, meta=meta)
    return ExplanationResult(
        original_prediction=original, classes=classes, pmi_maps=pmi_maps,
        ig_map=ig_map, patch_table=tuple(records), grid=grid,
    )


def occlusion_map(
    classifier: Classifier,
    image: Image,
    fill: int | tuple[int, ...],
    config: EngineConfig = EngineConfig(),
) -> AttributionMap:
    """Reference-value baseline: per patch, the raw probability drop
    p(y_c | x) - p(y_c | x with the patch filled)."""
    if image.shape != classifier.input_shape:
        raise ValueError(f"image shape {image.shape} != classifier {classifier.input_shape}")
    fill_t = (fill,) * image.channels if isinstance(fill, int) else tuple(fill)
    if len(fill_t) != image.channels or any(not 0 <= v <= 255 for v in fill_t):
        raise ValueError(f"fill {fill!r} is not a byte per channel")
    original = classifier.predict_batch([image])[0]
    c = resolve_classes(config.classes, original)[0]
    grid = build_patch_grid(image.height, image.width, config.k, config.effective_stride)
    patch = np.tile(np.array(fill_t, dtype=np.uint8), (config.k, config.k, 1))
    filled = [apply_patch(image, origin, patch) for origin in grid.origins]
    preds = classifier.predict_batch(filled)
    diffs = np.array([original.probs[c] - p.probs[c] for p in preds])
    values = accumulate_patch_values(grid, diffs, image.height, image.width)
    meta = {"k": config.k, "stride": config.effective_stride, "fill": list(fill_t),
            "class": c, "classifier": classifier.ident}
    return AttributionMap(kind="occlusion", values=values, class_index=c, meta=meta)


def _logodds(p: float, eps: float, log_base: float) -> float:
    p = min(max(p, eps), 1.0 - eps)
    val = math.log2(p / (1.0 - p))
    return val if log_base == 2.0 else val / math.log2(log_base)


def pda_map(
    classifier: Classifier,
    sampler: Sampler,
    image: Image,
    config: EngineConfig = EngineConfig(),
) -> AttributionMap:
    """Weight-of-evidence baseline: logodds(p(y_c|x)) - logodds(marginal),
    with the marginal from the same Monte-Carlo machinery and grid as the
    main method, so comparisons isolate the diff function."""
    if image.shape != classifier.input_shape:
        raise ValueError(f"image shape {image.shape} != classifier {classifier.input_shape}")
    if sampler.k != config.k:
        raise ValueError(f"sampler K={sampler.k} != config K={config.k}")
    original = classifier.predict_batch([image])[0]
    c = resolve_classes(config.classes, original)[0]
    grid = build_patch_grid(image.height, image.width, config.k, config.effective_stride)
    woe_full = _logodds(float(original.probs[c]), config.eps, config.log_base)
    values_per_patch = []
    for index, origin in enumerate(grid.origins):
        seed_i = derive_patch_seed(config.seed, index)
        marg = marginal_prediction(classifier, sampler, image, origin, config.n_samples, seed_i)
        values_per_patch.append(woe_full - _logodds(float(marg.probs[c]), config.eps, config.log_base))
    values = accumulate_patch_values(grid, np.array(values_per_patch),
                                     image.height, image.width)
    meta = {"k": config.k, "n": config.n_samples, "stride": config.effective_stride,
            "eps": config.eps, "seed": config.seed, "log_base": config.log_base,
            "class": c, "sampler": sampler.ident, "classifier": classifier.ident}
    return AttributionMap(kind="pda", values=values, class_index=c, meta=meta)
