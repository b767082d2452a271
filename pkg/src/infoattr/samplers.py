"""Conditional distributions over patch values given a 3K x 3K context window.

Three in-process samplers cover the replacement-value spectrum: a constant
reference fill, a conditional Gaussian (moment matching + Schur complement),
and an empirical patch dictionary keyed by a quantized descriptor of the
context ring. A learned neural sampler can be plugged in over the wire
protocol (see `infoattr.protocol`).

All samplers condition only on the ring of the window; the masked center is
never read, so the value being explained cannot leak into its own replacement
distribution.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateDataError, FormatError
from .types import ContextWindow, Image, build_patch_grid, extract_context

SAMPLER_MAGIC = b"IATSMPL1"


@dataclass(frozen=True)
class DescriptorConfig:
    """Context descriptor: the ring (window minus center) is traversed
    row-major, split into `cells` near-equal segments, and each segment's
    per-channel mean is the descriptor entry; `levels` quantization steps
    turn it into a dictionary key."""

    cells: int = 8
    levels: int = 16

    def __post_init__(self):
        if self.cells < 1:
            raise ValueError("descriptor needs >= 1 cell")
        if self.levels < 2:
            raise ValueError("descriptor needs >= 2 quantization levels")


@lru_cache(maxsize=64)
def _ring_segments(k: int, cells: int) -> tuple[np.ndarray, ...]:
    """Flat indices into a (3K, 3K) window for each ring segment."""
    side = 3 * k
    mask = np.ones((side, side), dtype=bool)
    mask[k:2 * k, k:2 * k] = False
    ring = np.flatnonzero(mask.reshape(-1))
    if cells > ring.size:
        raise ValueError(f"{cells} descriptor cells exceed the {ring.size}-pixel ring")
    return tuple(np.array_split(ring, cells))


def ring_cell_means(window_values: np.ndarray, k: int, cells: int) -> np.ndarray:
    """Per-cell, per-channel mean intensities of the context ring (floats in
    [0, 255], length cells * C)."""
    flat = window_values.reshape(-1, window_values.shape[2]).astype(np.float64)
    segments = _ring_segments(k, cells)
    return np.concatenate([flat[idx].mean(axis=0) for idx in segments])


def quantize_descriptor(means: np.ndarray, levels: int) -> tuple[int, ...]:
    lv = np.minimum((means * levels / 256.0).astype(np.int64), levels - 1)
    return tuple(int(v) for v in lv)


class Sampler:
    """Contract: n seeded K x K x C byte patches per call; `support` exposes the
    full outcome distribution for enumerable samplers and returns None otherwise."""

    k: int
    channels: int
    enumerable: bool
    ident: str

    def sample(self, context: ContextWindow, n: int, seed: int) -> np.ndarray:
        raise NotImplementedError

    def support(self, context: ContextWindow) -> list[tuple[np.ndarray, float]] | None:
        return None

    def _check(self, context: ContextWindow, n: int):
        if context.k != self.k:
            raise ValueError(f"context K={context.k} does not match sampler K={self.k}")
        if context.channels != self.channels:
            raise ValueError(
                f"context has {context.channels} channels, sampler expects {self.channels}"
            )
        if n < 1:
            raise ValueError("need n >= 1 samples")


@dataclass(frozen=True)
class ReferenceSampler(Sampler):
    """Constant reference value per channel (the classic gray-fill replacement)."""

    k: int
    channels: int
    fill: tuple[int, ...]

    def __post_init__(self):
        if len(self.fill) != self.channels:
            raise ValueError(f"fill needs {self.channels} bytes, got {self.fill}")
        if any(not 0 <= v <= 255 for v in self.fill):
            raise ValueError(f"fill bytes must be in [0, 255], got {self.fill}")

    enumerable = True

    @property
    def ident(self) -> str:
        return f"reference:{','.join(str(v) for v in self.fill)}"

    def _patch(self) -> np.ndarray:
        return np.tile(np.array(self.fill, dtype=np.uint8), (self.k, self.k, 1))

    def sample(self, context: ContextWindow, n: int, seed: int) -> np.ndarray:
        self._check(context, n)
        return np.tile(self._patch(), (n, 1, 1, 1))

    def support(self, context: ContextWindow):
        self._check(context, 1)
        return [(self._patch(), 1.0)]


@dataclass(frozen=True, eq=False)
class ConditionalGaussianModel(Sampler):
    """Joint Gaussian over (patch values ++ ring descriptor); conditioning on a
    context is the Schur-complement conditional, sampled values rounded and
    clamped to bytes."""

    k: int
    channels: int
    descriptor: DescriptorConfig
    mean: np.ndarray  # (P + D,)
    cov: np.ndarray  # (P + D, P + D)
    jitter: float

    def __post_init__(self):
        p = self.k * self.k * self.channels
        d = self.descriptor.cells * self.channels
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.shape != (p + d,) or cov.shape != (p + d, p + d):
            raise ValueError(f"moments must have dimension {p + d}")
        if not np.allclose(cov, cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    enumerable = False

    @property
    def patch_dim(self) -> int:
        return self.k * self.k * self.channels

    @property
    def ident(self) -> str:
        digest = hashlib.sha256(self.mean.tobytes() + self.cov.tobytes()).hexdigest()[:12]
        return f"gaussian:K{self.k}:{digest}"

    def conditional_moments(self, descriptor_values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the patch block given the descriptor block."""
        p = self.patch_dim
        mu_p, mu_d = self.mean[:p], self.mean[p:]
        cov_pp = self.cov[:p, :p]
        cov_pd = self.cov[:p, p:]
        cov_dd = self.cov[p:, p:]
        gain = np.linalg.solve(cov_dd, cov_pd.T).T  # cov_pd @ cov_dd^-1
        mean = mu_p + gain @ (np.asarray(descriptor_values, dtype=np.float64) - mu_d)
        cov = cov_pp - gain @ cov_pd.T
        return mean, 0.5 * (cov + cov.T)

    def sample(self, context: ContextWindow, n: int, seed: int) -> np.ndarray:
        self._check(context, n)
        desc = ring_cell_means(context.values, self.k, self.descriptor.cells)
        mean, cov = self.conditional_moments(desc)
        try:
            chol = np.linalg.cholesky(cov + self.jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError as e:
            raise DegenerateDataError(f"conditional covariance not positive definite: {e}") from e
        rng = np.random.default_rng(seed)
        draws = mean + rng.standard_normal((n, self.patch_dim)) @ chol.T
        bytes_ = np.clip(np.rint(draws), 0, 255).astype(np.uint8)
        return bytes_.reshape(n, self.k, self.k, self.channels)


def fit_conditional_gaussian(
    images: list[Image],
    k: int,
    descriptor: DescriptorConfig = DescriptorConfig(),
    jitter: float = 1e-6,
    stride: int | None = None,
) -> ConditionalGaussianModel:
    """Moment-match the joint (patch, descriptor) distribution over a patch grid
    of every training image. Requires at least dim + 1 pairs; raises
    DegenerateDataError if the jittered covariance is not positive definite."""
    if not images:
        raise DegenerateDataError("empty training set")
    channels = images[0].channels
    rows = []
    for img in images:
        if img.channels != channels:
            raise ValueError("training images must share a channel count")
        grid = build_patch_grid(img.height, img.width, k, stride or k)
        for origin in grid.origins:
            ctx = extract_context(img, origin, k)
            patch = ctx.center().reshape(-1).astype(np.float64)
            desc = ring_cell_means(ctx.values, k, descriptor.cells)
            rows.append(np.concatenate([patch, desc]))
    feats = np.stack(rows)
    dim = feats.shape[1]
    if feats.shape[0] < dim + 1:
        raise DegenerateDataError(
            f"need >= {dim + 1} patches to estimate {dim}-dim moments, got {feats.shape[0]}"
        )
    mean = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False) + jitter * np.eye(dim)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise DegenerateDataError(
            "joint covariance is rank-deficient; increase jitter"
        ) from e
    return ConditionalGaussianModel(
        k=k, channels=channels, descriptor=descriptor, mean=mean, cov=cov, jitter=jitter
    )


@dataclass(frozen=True, eq=False)
class EmpiricalPatchModel(Sampler):
    """Dictionary of real training patches bucketed by the quantized context
    descriptor; unseen descriptors fall back to the nearest bucket by L1
    distance, ties to the lowest key."""

    k: int
    channels: int
    descriptor: DescriptorConfig
    buckets: dict[tuple[int, ...], np.ndarray]  # key -> (n, K, K, C) uint8

    def __post_init__(self):
        if not self.buckets:
            raise DegenerateDataError("empirical model has no buckets")
        for key, patches in self.buckets.items():
            if patches.shape[0] == 0:
                raise ValueError(f"bucket {key} is empty")
            if patches.shape[1:] != (self.k, self.k, self.channels):
                raise ValueError(f"bucket {key} patches have shape {patches.shape}")
        object.__setattr__(self, "_keys", tuple(sorted(self.buckets)))

    enumerable = True

    @property
    def num_patches(self) -> int:
        return sum(p.shape[0] for p in self.buckets.values())

    @property
    def ident(self) -> str:
        h = hashlib.sha256()
        for key in self._keys:
            h.update(repr(key).encode() + self.buckets[key].tobytes())
        return f"empirical:K{self.k}:{h.hexdigest()[:12]}"

    def match_bucket(self, key: tuple[int, ...]) -> tuple[int, ...]:
        if key in self.buckets:
            return key
        return min(self._keys, key=lambda cand: (sum(abs(a - b) for a, b in zip(cand, key)), cand))

    def _bucket_for(self, context: ContextWindow) -> np.ndarray:
        means = ring_cell_means(context.values, self.k, self.descriptor.cells)
        return self.buckets[self.match_bucket(quantize_descriptor(means, self.descriptor.levels))]

    def sample(self, context: ContextWindow, n: int, seed: int) -> np.ndarray:
        self._check(context, n)
        patches = self._bucket_for(context)
        rng = np.random.default_rng(seed)
        return patches[rng.integers(0, patches.shape[0], size=n)].copy()

    def support(self, context: ContextWindow):
        self._check(context, 1)
        patches = self._bucket_for(context)
        prob = 1.0 / patches.shape[0]
        return [(patches[i].copy(), prob) for i in range(patches.shape[0])]


def build_empirical_sampler(
    images: list[Image],
    k: int,
    descriptor: DescriptorConfig = DescriptorConfig(),
    max_per_bucket: int = 64,
    min_patches: int = 1,
    stride: int | None = None,
    seed: int = 0,
) -> EmpiricalPatchModel:
    """Assign every training patch to the bucket of its own context descriptor;
    overfull buckets are truncated by seeded reservoir sampling (uniform over
    the stream)."""
    if not images:
        raise DegenerateDataError("empty training set")
    channels = images[0].channels
    raw: dict[tuple[int, ...], list[np.ndarray]] = {}
    for img in images:
        if img.channels != channels:
            raise ValueError("training images must share a channel count")
        grid = build_patch_grid(img.height, img.width, k, stride or k)
        for origin in grid.origins:
            ctx = extract_context(img, origin, k)
            means = ring_cell_means(ctx.values, k, descriptor.cells)
            key = quantize_descriptor(means, descriptor.levels)
            raw.setdefault(key, []).append(np.array(ctx.center(), dtype=np.uint8))
    total = sum(len(v) for v in raw.values())
    if total < min_patches:
        raise DegenerateDataError(f"collected {total} patches, need >= {min_patches}")

    buckets = {}
    for key, items in raw.items():
        if len(items) > max_per_bucket:
            rng = np.random.default_rng([seed, *key])
            reservoir = items[:max_per_bucket]
            for t in range(max_per_bucket, len(items)):
                j = int(rng.integers(0, t + 1))
                if j < max_per_bucket:
                    reservoir[j] = items[t]
            items = reservoir
        buckets[key] = np.stack(items)
    return EmpiricalPatchModel(k=k, channels=channels, descriptor=descriptor, buckets=buckets)


def _descriptor_header(cfg: DescriptorConfig) -> dict:
    return {"cells": cfg.cells, "levels": cfg.levels}


def sampler_bytes(model: Sampler) -> bytes:
    """Binary container: IATSMPL1 magic, uint32 header length, JSON header,
    raw payload (little-endian float64 moments / length-prefixed patch lists)."""
    if isinstance(model, ReferenceSampler):
        header = {"kind": "reference", "k": model.k, "channels": model.channels,
                  "fill": list(model.fill)}
        payload = b""
    elif isinstance(model, ConditionalGaussianModel):
        header = {"kind": "gaussian", "k": model.k, "channels": model.channels,
                  "descriptor": _descriptor_header(model.descriptor),
                  "dim": model.mean.shape[0], "jitter": model.jitter}
        payload = model.mean.astype("<f8").tobytes() + model.cov.astype("<f8").tobytes()
    elif isinstance(model, EmpiricalPatchModel):
        header = {"kind": "empirical", "k": model.k, "channels": model.channels,
                  "descriptor": _descriptor_header(model.descriptor),
                  "buckets": len(model.buckets)}
        parts = []
        for key in sorted(model.buckets):
            patches = model.buckets[key]
            parts.append(struct.pack("<I", len(key)))
            parts.append(np.array(key, dtype="<i4").tobytes())
            parts.append(struct.pack("<I", patches.shape[0]))
            parts.append(patches.tobytes())
        payload = b"".join(parts)
    else:
        raise ValueError(f"cannot serialize sampler of type {type(model).__name__}")
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return SAMPLER_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload


def save_sampler(model: Sampler, path) -> None:
    with open(path, "wb") as f:
        f.write(sampler_bytes(model))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.path}: truncated sampler file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_sampler(path) -> Sampler:
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(blob, path)
    if r.take(len(SAMPLER_MAGIC)) != SAMPLER_MAGIC:
        raise FormatError(f"{path}: bad magic, not a sampler file")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: unreadable header ({e})") from e
    kind = header.get("kind")
    k, channels = int(header["k"]), int(header["channels"])
    if kind == "reference":
        return ReferenceSampler(k=k, channels=channels, fill=tuple(header["fill"]))
    if kind == "gaussian":
        cfg = DescriptorConfig(**header["descriptor"])
        dim = int(header["dim"])
        mean = np.frombuffer(r.take(8 * dim), dtype="<f8")
        cov = np.frombuffer(r.take(8 * dim * dim), dtype="<f8").reshape(dim, dim)
        return ConditionalGaussianModel(
            k=k, channels=channels, descriptor=cfg,
            mean=mean, cov=cov, jitter=float(header["jitter"]),
        )
    if kind == "empirical":
        cfg = DescriptorConfig(**header["descriptor"])
        buckets = {}
        for _ in range(int(header["buckets"])):
            key_len = r.u32()
            key = tuple(int(v) for v in np.frombuffer(r.take(4 * key_len), dtype="<i4"))
            count = r.u32()
            data = np.frombuffer(r.take(count * k * k * channels), dtype=np.uint8)
            buckets[key] = data.reshape(count, k, k, channels).copy()
        return EmpiricalPatchModel(k=k, channels=channels, descriptor=cfg, buckets=buckets)
    raise FormatError(f"{path}: unknown sampler kind {kind!r}")
