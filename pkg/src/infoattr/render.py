"""Raster and map persistence plus heatmap rendering.

Supports 8-bit PNG (gray / RGB, filters 0-4 on read, filter 0 and a fixed
compression level on write so output bytes are reproducible), binary PPM (P6)
and PGM (P5), the `infoattr-map-v1` JSON map format, diverging and sequential
colormaps, and alpha overlays.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError
from .types import MAP_KINDS, AttributionMap, Image

MAP_FORMAT_TAG = "infoattr-map-v1"
_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


# ---------------------------------------------------------------- raster I/O

def _read_pnm(blob: bytes, path) -> Image:
    # token scanner honoring '#' comments
    def tokens():
        i = 0
        while i < len(blob):
            ch = blob[i:i + 1]
            if ch.isspace():
                i += 1
            elif ch == b"#":
                while i < len(blob) and blob[i:i + 1] != b"\n":
                    i += 1
            else:
                j = i
                while j < len(blob) and not blob[j:j + 1].isspace():
                    j += 1
                yield i, blob[i:j]
                i = j

    it = tokens()
    try:
        _, magic = next(it)
        _, w_tok = next(it)
        _, h_tok = next(it)
        maxval_pos, maxval_tok = next(it)
        w, h, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except (StopIteration, ValueError) as e:
        raise FormatError(f"{path}: malformed PNM header") from e
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit PNM supported, maxval={maxval}")
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise FormatError(f"{path}: unsupported PNM magic {magic!r}")
    start = maxval_pos + len(maxval_tok) + 1  # single whitespace byte after maxval
    data = blob[start:start + h * w * channels]
    if len(data) != h * w * channels:
        raise FormatError(f"{path}: truncated PNM payload")
    return Image(np.frombuffer(data, dtype=np.uint8).reshape(h, w, channels).copy())


def pnm_bytes(image: Image) -> bytes:
    magic = b"P5" if image.channels == 1 else b"P6"
    return magic + b"\n%d %d\n255\n" % (image.width, image.height) + image.data.tobytes()


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _defilter(raw: bytes, height: int, width: int, channels: int, path) -> np.ndarray:
    stride = width * channels
    if len(raw) != height * (stride + 1):
        raise FormatError(f"{path}: IDAT payload has wrong length")
    out = np.zeros((height, stride), dtype=np.uint8)
    pos = 0
    for row in range(height):
        ftype = raw[pos]
        line = bytearray(raw[pos + 1:pos + 1 + stride])
        pos += 1 + stride
        prev = out[row - 1] if row > 0 else np.zeros(stride, dtype=np.uint8)
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(channels, stride):
                line[i] = (line[i] + line[i - channels]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(stride):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                left = line[i - channels] if i >= channels else 0
                line[i] = (line[i] + (left + int(prev[i])) // 2) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                left = line[i - channels] if i >= channels else 0
                upleft = int(prev[i - channels]) if i >= channels else 0
                line[i] = (line[i] + _paeth(left, int(prev[i]), upleft)) & 0xFF
        else:
            raise FormatError(f"{path}: unknown PNG filter {ftype}")
        out[row] = np.frombuffer(bytes(line), dtype=np.uint8)
    return out.reshape(height, width, channels)


def _read_png(blob: bytes, path) -> Image:
    if blob[:8] != _PNG_SIGNATURE:
        raise FormatError(f"{path}: not a PNG file")
    pos = 8
    ihdr = None
    idat = b""
    while pos + 8 <= len(blob):
        length, ctype = struct.unpack(">I4s", blob[pos:pos + 8])
        body = blob[pos + 8:pos + 8 + length]
        if len(body) != length:
            raise FormatError(f"{path}: truncated chunk {ctype!r}")
        if ctype == b"IHDR":
            ihdr = body
        elif ctype == b"IDAT":
            idat += body
        elif ctype == b"IEND":
            break
        pos += 12 + length
    if ihdr is None or not idat:
        raise FormatError(f"{path}: missing IHDR/IDAT")
    width, height, depth, color, _comp, _filt, interlace = struct.unpack(">IIBBBBB", ihdr)
    if depth != 8:
        raise FormatError(f"{path}: unsupported bit depth {depth} (only 8-bit)")
    if color not in (0, 2):
        raise FormatError(f"{path}: unsupported color type {color} (only gray/RGB)")
    if interlace != 0:
        raise FormatError(f"{path}: interlaced PNG not supported")
    channels = 1 if color == 0 else 3
    try:
        raw = zlib.decompress(idat)
    except zlib.error as e:
        raise FormatError(f"{path}: corrupt IDAT stream ({e})") from e
    return Image(_defilter(raw, height, width, channels, path))


def _chunk(ctype: bytes, body: bytes) -> bytes:
    return (struct.pack(">I", len(body)) + ctype + body
            + struct.pack(">I", zlib.crc32(ctype + body) & 0xFFFFFFFF))


def png_bytes(image: Image) -> bytes:
    color = 0 if image.channels == 1 else 2
    ihdr = struct.pack(">IIBBBBB", image.width, image.height, 8, color, 0, 0, 0)
    stride_rows = [b"\x00" + image.data[r].tobytes() for r in range(image.height)]
    idat = zlib.compress(b"".join(stride_rows), 6)
    return (_PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", idat) + _chunk(b"IEND", b""))


def load_image(path) -> Image:
    """Read an 8-bit PNG / PPM (P6) / PGM (P5) raster, sniffing the magic."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] == _PNG_SIGNATURE:
        return _read_png(blob, path)
    if blob[:2] in (b"P5", b"P6"):
        return _read_pnm(blob, path)
    raise FormatError(f"{path}: unrecognized raster format")


def image_bytes(image: Image, suffix: str) -> bytes:
    """Encoded raster bytes for .png / .ppm (RGB) / .pgm (gray)."""
    suffix = suffix.lower()
    if suffix == ".png":
        return png_bytes(image)
    if suffix in (".ppm", ".pgm"):
        want = 3 if suffix == ".ppm" else 1
        if image.channels != want:
            raise ValueError(f"{suffix} requires {want} channel(s), image has {image.channels}")
        return pnm_bytes(image)
    raise ValueError(f"unsupported image extension {suffix!r} (use .png/.ppm/.pgm)")


def save_image(image: Image, path) -> None:
    """Write by extension: .png, .ppm (RGB), .pgm (gray). Round-trips are
    bit-exact."""
    data = image_bytes(image, Path(path).suffix)
    with open(path, "wb") as f:
        f.write(data)


# ----------------------------------------------------------------- rendering

@dataclass(frozen=True)
class Colormap:
    """diverging: negative -> blue, zero -> white, positive -> red, normalized
    by the symmetric max |value|. sequential: zero -> black, max -> white."""

    kind: str = "diverging"

    def __post_init__(self):
        if self.kind not in ("diverging", "sequential"):
            raise ValueError(f"unknown colormap kind {self.kind!r}")


def default_colormap(amap: AttributionMap) -> Colormap:
    return Colormap("sequential" if amap.kind == "ig" else "diverging")


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def render_heatmap(amap: AttributionMap, colormap: Colormap | None = None) -> Image:
    """RGB heatmap of the map values; value 0 maps to the neutral color exactly
    regardless of scale, and an all-zero map renders uniformly neutral."""
    cmap = colormap or default_colormap(amap)
    v = amap.values
    out = np.zeros((amap.height, amap.width, 3), dtype=np.float64)
    if cmap.kind == "diverging":
        scale = float(np.abs(v).max())
        t = v / scale if scale > 0 else np.zeros_like(v)
        pos = np.clip(t, 0.0, 1.0)
        neg = np.clip(-t, 0.0, 1.0)
        out[..., 0] = 255.0 * (1.0 - neg)          # red arm keeps R at 255
        out[..., 1] = 255.0 * (1.0 - np.maximum(pos, neg))
        out[..., 2] = 255.0 * (1.0 - pos)          # blue arm keeps B at 255
    else:
        top = float(v.max())
        t = np.clip(v / top, 0.0, 1.0) if top > 0 else np.zeros_like(v)
        out[..., :] = (255.0 * t)[..., None]
    return Image(_round_half_up(out).astype(np.uint8))


def overlay(base: Image, heat: Image, alpha: float) -> Image:
    """Per-channel blend round(alpha*heat + (1-alpha)*base), round half up.
    A grayscale base is broadcast to RGB first."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if (base.height, base.width) != (heat.height, heat.width):
        raise ValueError(f"dimensions differ: base {base.height}x{base.width}, "
                         f"heat {heat.height}x{heat.width}")
    if heat.channels != 3:
        raise ValueError("heat image must be RGB")
    base_rgb = base.data if base.channels == 3 else np.repeat(base.data, 3, axis=2)
    blended = alpha * heat.data.astype(np.float64) + (1.0 - alpha) * base_rgb.astype(np.float64)
    return Image(np.clip(_round_half_up(blended), 0, 255).astype(np.uint8))


# ------------------------------------------------------------------ map JSON

def map_json_text(amap: AttributionMap) -> str:
    """Canonical (sorted-key, compact) JSON text; full float64 precision via
    Python's round-trip float repr; NaN is rejected."""
    record = {
        "format": MAP_FORMAT_TAG,
        "kind": amap.kind,
        "height": amap.height,
        "width": amap.width,
        "values": amap.values.reshape(-1).tolist(),
        "meta": amap.meta,
    }
    if amap.class_index is not None:
        record["class"] = amap.class_index
    return json.dumps(record, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_map(amap: AttributionMap, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(map_json_text(amap))


def load_map(path) -> AttributionMap:
    try:
        with open(path, "r", encoding="utf-8") as f:
            record = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"{path}: not a map JSON file ({e})") from e
    if not isinstance(record, dict) or record.get("format") != MAP_FORMAT_TAG:
        raise FormatError(f"{path}: expected format tag {MAP_FORMAT_TAG!r}")
    for key in ("kind", "height", "width", "values", "meta"):
        if key not in record:
            raise FormatError(f"{path}: missing field {key!r}")
    kind = record["kind"]
    if kind not in MAP_KINDS:
        raise FormatError(f"{path}: unknown map kind {kind!r}")
    h, w = int(record["height"]), int(record["width"])
    values = np.asarray(record["values"], dtype=np.float64)
    if values.shape != (h * w,):
        raise FormatError(f"{path}: expected {h * w} values, got {values.shape}")
    class_index = record.get("class")
    try:
        return AttributionMap(kind=kind, values=values.reshape(h, w),
                              class_index=class_index, meta=record["meta"])
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from e
