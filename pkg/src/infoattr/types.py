"""Core value types: byte rasters, patch geometry, probability vectors and
attribution maps, plus the patch-level operations every other module builds on.

All types are immutable after construction and safe to share across threads.
Pixel data is always unsigned bytes in [0, 255], row-major, channel-last;
classifier adapters own any normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

IG_FLOOR = -1e-9  # KL nonnegativity up to the eps perturbation inside the log


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr and arr.flags.writeable:
        out = arr.copy()  # never freeze (or alias) a caller's writeable array
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Image:
    """H x W x C unsigned-byte raster, the unit of classifier input and perturbation."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"image data must be (H, W, C), got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"image data must be uint8, got {arr.dtype}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ValueError(f"image dimensions must be >= 1, got {h}x{w}")
        if c not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {c}")
        object.__setattr__(self, "data", _frozen(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True, eq=False)
class Prediction:
    """Normalized posterior over L >= 2 classes."""

    probs: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 1 or arr.shape[0] < 2:
            raise ValueError(f"prediction must be a vector over >= 2 classes, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("prediction contains non-finite entries")
        if np.any(arr < 0):
            raise ValueError(f"prediction has negative entries (min {arr.min()})")
        total = float(arr.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"prediction sums to {total}, expected 1 within 1e-6")
        object.__setattr__(self, "probs", _frozen(arr))

    @property
    def num_classes(self) -> int:
        return self.probs.shape[0]

    def top(self, k: int = 1) -> list[int]:
        """Indices of the k most probable classes, ties broken by lower index."""
        order = np.argsort(-self.probs, kind="stable")
        return [int(i) for i in order[:k]]


@dataclass(frozen=True)
class PatchGrid:
    """K x K patch tiling of an image: origins are (row, col) top-left corners."""

    k: int
    stride: int
    origins: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.origins)


@dataclass(frozen=True, eq=False)
class ContextWindow:
    """3K x 3K surroundings of a patch. The center K x K block is flagged by
    `mask`; its original bytes are retained (oracles may read them, samplers
    conditioning on the window must not)."""

    values: np.ndarray
    k: int
    mask: np.ndarray = field(repr=False)
    padding_mode: str = "reflect"

    def __post_init__(self):
        k = self.k
        arr = np.asarray(self.values)
        if arr.shape[:2] != (3 * k, 3 * k) or arr.dtype != np.uint8:
            raise ValueError(f"context window must be uint8 (3K, 3K, C) with K={k}, got {arr.shape}")
        m = np.asarray(self.mask, dtype=bool)
        expected = np.zeros((3 * k, 3 * k), dtype=bool)
        expected[k:2 * k, k:2 * k] = True
        if m.shape != expected.shape or not np.array_equal(m, expected):
            raise ValueError("mask must flag exactly the center K x K patch footprint")
        object.__setattr__(self, "values", _frozen(arr))
        object.__setattr__(self, "mask", _frozen(m))

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def center(self) -> np.ndarray:
        """Original bytes of the hidden patch."""
        k = self.k
        return self.values[k:2 * k, k:2 * k]


MAP_KINDS = ("pmi", "ig", "occlusion", "pda")
_CLASS_BEARING = ("pmi", "occlusion", "pda")


@dataclass(frozen=True, eq=False)
class AttributionMap:
    """H x W real-valued attribution map. For base-2 configurations the values
    are in bits. kind is one of `pmi`/`occlusion`/`pda` (class-specific; carry
    class_index) or `ig` (class-independent)."""

    kind: str
    values: np.ndarray
    class_index: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MAP_KINDS:
            raise ValueError(f"unknown map kind {self.kind!r}")
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"map values must be a non-empty (H, W) array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("map values must be finite")
        if self.kind in _CLASS_BEARING:
            if self.class_index is None or self.class_index < 0:
                raise ValueError(f"{self.kind} map requires a nonnegative class_index")
        elif self.class_index is not None:
            raise ValueError("ig map carries no class_index")
        if self.kind == "ig" and float(arr.min()) < IG_FLOOR:
            raise ValueError(f"ig map dips to {arr.min()}, below the {IG_FLOOR} floor")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _axis_origins(dim: int, k: int, stride: int) -> list[int]:
    starts = list(range(0, dim - k + 1, stride))
    if starts[-1] != dim - k:
        starts.append(dim - k)  # clamp the last origin so coverage never needs resizing
    return starts


def build_patch_grid(height: int, width: int, k: int, stride: int) -> PatchGrid:
    """Enumerate patch origins at multiples of `stride`, clamping the last
    row/col origin to (dim - K) when the dimensions do not divide evenly.

    Raises GeometryError when K exceeds an image dimension, ValueError for a
    stride outside [1, K].
    """
    if k < 1:
        raise GeometryError(f"patch size must be >= 1, got {k}")
    if k > height or k > width:
        raise GeometryError(f"patch size {k} exceeds image dimensions {height}x{width}")
    if not 1 <= stride <= k:
        raise ValueError(f"stride must be in [1, K={k}], got {stride}")
    origins = tuple(
        (r, c)
        for r in _axis_origins(height, k, stride)
        for c in _axis_origins(width, k, stride)
    )
    return PatchGrid(k=k, stride=stride, origins=origins)


def _check_patch_inside(image: Image, origin: tuple[int, int], k: int):
    r, c = origin
    if r < 0 or c < 0 or r + k > image.height or c + k > image.width:
        raise GeometryError(
            f"patch K={k} at origin {origin} leaves the {image.height}x{image.width} image"
        )


def extract_context(image: Image, origin: tuple[int, int], k: int) -> ContextWindow:
    """3K x 3K window centered on the patch at `origin`, reflect-padded where it
    overhangs the image border (edge row/col not repeated)."""
    _check_patch_inside(image, origin, k)
    padded = np.pad(image.data, ((k, k), (k, k), (0, 0)), mode="reflect")
    r, c = origin
    window = padded[r:r + 3 * k, c:c + 3 * k]
    mask = np.zeros((3 * k, 3 * k), dtype=bool)
    mask[k:2 * k, k:2 * k] = True
    return ContextWindow(values=window, k=k, mask=mask)


def apply_patch(image: Image, origin: tuple[int, int], values: np.ndarray) -> Image:
    """Copy of `image` with the K x K x C block at `origin` replaced by `values`;
    every other pixel is bit-identical."""
    vals = np.asarray(values)
    if vals.ndim != 3 or vals.shape[0] != vals.shape[1] or vals.dtype != np.uint8:
        raise ValueError(f"patch values must be uint8 (K, K, C), got {vals.shape} {vals.dtype}")
    k = vals.shape[0]
    if vals.shape[2] != image.channels:
        raise ValueError(f"patch has {vals.shape[2]} channels, image has {image.channels}")
    _check_patch_inside(image, origin, k)
    out = image.data.copy()
    r, c = origin
    out[r:r + k, c:c + k] = vals
    out.setflags(write=False)  # transfer ownership, skip _frozen's defensive copy
    return Image(out)


def accumulate_patch_values(
    grid: PatchGrid, per_patch: np.ndarray, height: int, width: int
) -> np.ndarray:
    """Distribute one value per patch uniformly over its pixels; pixels covered
    by several patches take the mean of their patches' values."""
    vals = np.asarray(per_patch, dtype=np.float64)
    if vals.shape != (len(grid),):
        raise ValueError(f"need one value per patch ({len(grid)}), got shape {vals.shape}")
    total = np.zeros((height, width), dtype=np.float64)
    count = np.zeros((height, width), dtype=np.int64)
    k = grid.k
    for (r, c), v in zip(grid.origins, vals):
        total[r:r + k, c:c + k] += v
        count[r:r + k, c:c + k] += 1
    if np.any(count == 0):
        raise ValueError("grid does not cover every pixel")
    return total / count
