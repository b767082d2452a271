"""Raster I/O round-trips, colormap geometry, overlay blending, map JSON."""

import json
import struct
import zlib

import numpy as np
import pytest

from conftest import random_image
from infoattr import (
    AttributionMap,
    Colormap,
    FormatError,
    Image,
    load_image,
    load_map,
    overlay,
    render_heatmap,
    save_image,
    save_map,
)
from infoattr.render import _PNG_SIGNATURE, _chunk, map_json_text


class TestPnm:
    def test_known_bytes_p6(self, tmp_path):
        payload = bytes(range(12))
        blob = b"P6\n2 2\n255\n" + payload
        path = tmp_path / "x.ppm"
        path.write_bytes(blob)
        img = load_image(path)
        assert img.shape == (2, 2, 3)
        assert img.data.tobytes() == payload

    def test_roundtrip_p6_p5(self, tmp_path, rng):
        rgb = random_image(rng, 5, 7, 3)
        save_image(rgb, tmp_path / "a.ppm")
        assert np.array_equal(load_image(tmp_path / "a.ppm").data, rgb.data)
        gray = random_image(rng, 5, 7, 1)
        save_image(gray, tmp_path / "a.pgm")
        assert np.array_equal(load_image(tmp_path / "a.pgm").data, gray.data)

    def test_16bit_pnm_rejected(self, tmp_path):
        path = tmp_path / "x.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n" + b"\x00" * 6)
        with pytest.raises(FormatError):
            load_image(path)

    def test_comment_handling(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5 # comment\n# another\n2 1\n255\n\x07\x09")
        img = load_image(path)
        assert img.data.reshape(-1).tolist() == [7, 9]


class TestPng:
    def test_roundtrip_gray_and_rgb(self, tmp_path, rng):
        for channels in (1, 3):
            img = random_image(rng, 9, 6, channels)
            path = tmp_path / f"c{channels}.png"
            save_image(img, path)
            back = load_image(path)
            assert np.array_equal(back.data, img.data)

    def test_deterministic_bytes(self, tmp_path, rng):
        img = random_image(rng, 8, 8, 3)
        save_image(img, tmp_path / "a.png")
        save_image(img, tmp_path / "b.png")
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def _png_from_scanlines(self, scanlines: bytes, width, height, color) -> bytes:
        ihdr = struct.pack(">IIBBBBB", width, height, 8, color, 0, 0, 0)
        return (_PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
                + _chunk(b"IDAT", zlib.compress(scanlines)) + _chunk(b"IEND", b""))

    def test_decodes_all_filter_types(self, tmp_path):
        # hand-filter a known 3x3 gray image with filters 1..4 per row cycle
        ref = np.array([[10, 60, 110], [20, 80, 140], [250, 5, 30]], dtype=np.uint8)

        def sub_filter(row):
            out = [row[0]]
            for i in range(1, len(row)):
                out.append((row[i] - row[i - 1]) & 0xFF)
            return bytes(out)

        def up_filter(row, prev):
            return bytes((int(r) - int(p)) & 0xFF for r, p in zip(row, prev))

        def avg_filter(row, prev):
            out = []
            for i, r in enumerate(row):
                left = row[i - 1] if i > 0 else 0
                out.append((int(r) - (int(left) + int(prev[i])) // 2) & 0xFF)
            return bytes(out)

        scan = (b"\x01" + sub_filter(ref[0])
                + b"\x02" + up_filter(ref[1], ref[0])
                + b"\x03" + avg_filter(ref[2], ref[1]))
        path = tmp_path / "f.png"
        path.write_bytes(self._png_from_scanlines(scan, 3, 3, 0))
        img = load_image(path)
        assert np.array_equal(img.data[..., 0], ref)

    def test_decodes_paeth(self, tmp_path):
        ref = np.array([[7, 200], [90, 33]], dtype=np.uint8)

        def paeth(a, b, c):
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            if pa <= pb and pa <= pc:
                return a
            return b if pb <= pc else c

        row0 = bytes([(7 - paeth(0, 0, 0)) & 0xFF, (200 - paeth(7, 0, 0)) & 0xFF])
        row1 = bytes([(90 - paeth(0, 7, 0)) & 0xFF, (33 - paeth(90, 200, 7)) & 0xFF])
        scan = b"\x04" + row0 + b"\x04" + row1
        path = tmp_path / "p.png"
        path.write_bytes(self._png_from_scanlines(scan, 2, 2, 0))
        img = load_image(path)
        assert np.array_equal(img.data[..., 0], ref)

    def test_16bit_png_rejected(self, tmp_path):
        ihdr = struct.pack(">IIBBBBB", 1, 1, 16, 0, 0, 0, 0)
        blob = (_PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
                + _chunk(b"IDAT", zlib.compress(b"\x00\x00\x00")) + _chunk(b"IEND", b""))
        path = tmp_path / "deep.png"
        path.write_bytes(blob)
        with pytest.raises(FormatError, match="bit depth"):
            load_image(path)

    def test_palette_png_rejected(self, tmp_path):
        ihdr = struct.pack(">IIBBBBB", 1, 1, 8, 3, 0, 0, 0)
        blob = (_PNG_SIGNATURE + _chunk(b"IHDR", ihdr)
                + _chunk(b"IDAT", zlib.compress(b"\x00\x00")) + _chunk(b"IEND", b""))
        path = tmp_path / "pal.png"
        path.write_bytes(blob)
        with pytest.raises(FormatError, match="color type"):
            load_image(path)

    def test_truncated_idat_rejected(self, tmp_path, rng):
        img = random_image(rng, 6, 6, 1)
        path = tmp_path / "t.png"
        save_image(img, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:40])
        with pytest.raises(FormatError):
            load_image(path)

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(b"garbage that is not an image")
        with pytest.raises(FormatError):
            load_image(path)


class TestHeatmap:
    def test_diverging_endpoints(self):
        amap = AttributionMap(kind="pmi", values=np.array([[-1.0, 0.0, 1.0]]), class_index=0)
        img = render_heatmap(amap, Colormap("diverging"))
        assert img.data[0, 0].tolist() == [0, 0, 255]
        assert img.data[0, 1].tolist() == [255, 255, 255]
        assert img.data[0, 2].tolist() == [255, 0, 0]

    def test_all_zero_neutral(self):
        pmi_map = AttributionMap(kind="pmi", values=np.zeros((3, 3)), class_index=0)
        img = render_heatmap(pmi_map, Colormap("diverging"))
        assert np.all(img.data == 255)
        ig_map = AttributionMap(kind="ig", values=np.zeros((3, 3)))
        img2 = render_heatmap(ig_map, Colormap("sequential"))
        assert np.all(img2.data == 0)

    def test_sequential_midpoint_gray(self):
        amap = AttributionMap(kind="ig", values=np.array([[0.0, 1.0, 2.0]]))
        img = render_heatmap(amap, Colormap("sequential"))
        mid = img.data[0, 1]
        assert np.all(np.abs(mid.astype(int) - 128) <= 1)
        assert img.data[0, 2].tolist() == [255, 255, 255]

    def test_zero_stays_neutral_at_any_scale(self, rng):
        for scale in (1e-6, 1.0, 1e6):
            vals = np.array([[0.0, scale], [-scale, scale / 3]])
            amap = AttributionMap(kind="pmi", values=vals, class_index=0)
            img = render_heatmap(amap, Colormap("diverging"))
            assert img.data[0, 0].tolist() == [255, 255, 255]

    def test_monotone_arms(self, rng):
        vals = np.linspace(-2, 2, 9).reshape(1, 9)
        amap = AttributionMap(kind="pmi", values=vals, class_index=0)
        img = render_heatmap(amap, Colormap("diverging")).data[0]
        pos = img[4:]  # ascending positive values
        assert all(pos[i + 1][1] <= pos[i][1] and pos[i + 1][2] <= pos[i][2]
                   for i in range(len(pos) - 1))
        neg = img[:5][::-1]  # ascending |negative| values
        assert all(neg[i + 1][0] <= neg[i][0] and neg[i + 1][1] <= neg[i][1]
                   for i in range(len(neg) - 1))


class TestOverlay:
    def test_alpha_extremes(self, rng):
        base = random_image(rng, 4, 4, 3)
        heat = random_image(rng, 4, 4, 3)
        assert np.array_equal(overlay(base, heat, 0.0).data, base.data)
        assert np.array_equal(overlay(base, heat, 1.0).data, heat.data)

    def test_half_blend_rounds_half_up(self):
        base = Image(np.zeros((1, 1, 3), dtype=np.uint8))
        heat = Image(np.full((1, 1, 3), 255, dtype=np.uint8))
        assert overlay(base, heat, 0.5).data[0, 0].tolist() == [128, 128, 128]

    def test_gray_base_broadcast(self, rng):
        base = random_image(rng, 4, 4, 1)
        heat = random_image(rng, 4, 4, 3)
        out = overlay(base, heat, 0.0)
        assert out.channels == 3
        assert np.array_equal(out.data[..., 0], base.data[..., 0])

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            overlay(random_image(rng, 4, 4, 3), random_image(rng, 5, 5, 3), 0.5)


class TestMapJson:
    def test_roundtrip_values_and_meta(self, tmp_path, rng):
        vals = rng.normal(0, 1, (4, 6))
        amap = AttributionMap(kind="pmi", values=vals, class_index=3,
                              meta={"k": 8, "n": 8, "eps": 1e-13, "seed": 5,
                                    "sampler": "empirical:abc"})
        path = tmp_path / "m.json"
        save_map(amap, path)
        back = load_map(path)
        assert np.array_equal(back.values, amap.values)  # bit-exact round-trip
        assert back.kind == "pmi" and back.class_index == 3
        assert back.meta == amap.meta

    def test_v0_tag_rejected(self, tmp_path):
        record = {"format": "infoattr-map-v0", "kind": "ig", "height": 1, "width": 1,
                  "values": [0.0], "meta": {}}
        path = tmp_path / "old.json"
        path.write_text(json.dumps(record))
        with pytest.raises(FormatError):
            load_map(path)

    def test_missing_field_rejected(self, tmp_path):
        record = {"format": "infoattr-map-v1", "kind": "ig", "height": 1, "width": 1,
                  "meta": {}}
        path = tmp_path / "x.json"
        path.write_text(json.dumps(record))
        with pytest.raises(FormatError, match="values"):
            load_map(path)

    def test_nan_rejected_at_construction_and_load(self, tmp_path):
        with pytest.raises(ValueError):
            AttributionMap(kind="ig", values=np.array([[np.nan]]))
        record = {"format": "infoattr-map-v1", "kind": "ig", "height": 1, "width": 1,
                  "values": [None], "meta": {}}
        path = tmp_path / "nan.json"
        path.write_text(json.dumps(record))
        with pytest.raises(FormatError):
            load_map(path)

    def test_text_is_deterministic(self, rng):
        vals = rng.normal(0, 1, (3, 3))
        amap = AttributionMap(kind="ig", values=np.abs(vals), meta={"a": 1, "b": 2})
        assert map_json_text(amap) == map_json_text(amap)
