"""Command-line orchestration.

Subcommands: explain, fit-sampler, evaluate, sanity, rerun. Every successful
run writes a manifest with the fully resolved configuration and input hashes;
`rerun <manifest>` reproduces the output files byte-identically. All artifacts
are computed before anything is written, and each file lands via a temp file
plus atomic rename, so failed runs leave no partial outputs.

Exit codes: 0 success, 2 invalid flags or values, 3 I/O or file-format
failure, 4 wire-protocol failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .classifiers import LinearSoftmaxModel, load_linear_model, randomize_parameters
from .engine import EngineConfig, explain
from .errors import FormatError, GeometryError, InfoAttrError, ProtocolError
from .evaluation import auc, pearson, perturbation_curve, sanity_param_randomization
from .protocol import connect_external, connect_external_sampler
from .render import (
    default_colormap,
    image_bytes,
    load_image,
    load_map,
    map_json_text,
    overlay,
    render_heatmap,
)
from .samplers import ReferenceSampler, DescriptorConfig, \
    build_empirical_sampler, fit_conditional_gaussian, load_sampler, sampler_bytes

MANIFEST_TAG = "infoattr-manifest-v1"
_IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_path(spec: str) -> str | None:
    """File path behind a spec, or None for transport/value specs."""
    for prefix in ("builtin:", "sampler:"):
        if spec.startswith(prefix):
            return spec[len(prefix):]
    if spec.startswith(("exec:", "tcp:", "reference:")):
        return None
    return spec


def _hash_input(spec: str) -> dict:
    """Hash file-backed inputs; record transport specs verbatim."""
    path = _input_path(spec)
    if path is None:
        return {"spec": spec}
    return {"spec": spec, "sha256": _sha256(path)}


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(f".tmp.{path.name}.{os.getpid()}")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def _write_artifacts(out_dir: Path, artifacts: dict[str, bytes]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for rel, data in artifacts.items():
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(path, data)


def _manifest_bytes(command: str, config: dict, inputs: dict, seed: int, wall: float) -> bytes:
    record = {
        "format": MANIFEST_TAG,
        "command": command,
        "config": config,
        "inputs": inputs,
        "seed": seed,
        "version": __version__,
        "wall_time_s": wall,
    }
    return (json.dumps(record, sort_keys=True, indent=2) + "\n").encode("utf-8")


def _default_workers() -> int:
    env = os.environ.get("INFOATTR_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(2, f"INFOATTR_WORKERS={env!r} is not an integer")
    return os.cpu_count() or 1


def _open_classifier(spec: str, timeout: float):
    if spec.startswith("builtin:"):
        return load_linear_model(spec[len("builtin:"):])
    if spec.startswith(("exec:", "tcp:")):
        return connect_external(spec, timeout=timeout)
    raise CliError(2, f"classifier spec must be builtin:<file>, exec:<cmd> or tcp:<addr>, got {spec!r}")


def _open_sampler(spec: str, k: int, channels: int, timeout: float) -> Sampler:
    if spec.startswith("reference:"):
        parts = spec[len("reference:"):].split(",")
        try:
            fill = tuple(int(p) for p in parts)
        except ValueError:
            raise CliError(2, f"bad reference fill {spec!r}")
        if len(fill) == 1:
            fill = fill * channels
        return ReferenceSampler(k=k, channels=channels, fill=fill)
    if spec.startswith(("exec:", "tcp:")):
        return connect_external_sampler(spec, timeout=timeout)
    return load_sampler(spec)


def _parse_classes(spec: str):
    if spec.startswith("top:"):
        return spec
    try:
        return tuple(int(p) for p in spec.split(","))
    except ValueError:
        raise CliError(2, f"classes must be 'top:<k>' or comma-separated indices, got {spec!r}")


def _parse_int_list(spec: str, flag: str) -> list[int]:
    try:
        vals = [int(p) for p in str(spec).split(",")]
    except ValueError:
        raise CliError(2, f"{flag} must be an integer or comma-separated integers, got {spec!r}")
    if not vals:
        raise CliError(2, f"{flag} must not be empty")
    return vals


# ------------------------------------------------------------------- explain

def _run_single_explain(image, classifier, sampler, cfg: EngineConfig, workers: int,
                        alpha: float, prefix: str) -> tuple[dict[str, bytes], dict]:
    result = explain(classifier, sampler, image, cfg, workers=workers)
    artifacts: dict[str, bytes] = {}
    maps = {}
    for c, amap in result.pmi_maps.items():
        artifacts[f"{prefix}pmi_c{c}.json"] = map_json_text(amap).encode()
        heat = render_heatmap(amap, default_colormap(amap))
        artifacts[f"{prefix}pmi_c{c}.png"] = image_bytes(heat, ".png")
        artifacts[f"{prefix}overlay_pmi_c{c}.png"] = image_bytes(overlay(image, heat, alpha), ".png")
        maps[f"pmi_c{c}"] = amap
    ig_heat = render_heatmap(result.ig_map, default_colormap(result.ig_map))
    artifacts[f"{prefix}ig.json"] = map_json_text(result.ig_map).encode()
    artifacts[f"{prefix}ig.png"] = image_bytes(ig_heat, ".png")
    artifacts[f"{prefix}overlay_ig.png"] = image_bytes(overlay(image, ig_heat, alpha), ".png")
    maps["ig"] = result.ig_map

    num_classes = result.original_prediction.num_classes
    header = (["patch", "row", "col", "ig"]
              + [f"marg_c{c}" for c in range(num_classes)]
              + [f"pmi_c{c}" for c in range(num_classes)])
    lines = [",".join(header)]
    for rec in result.patch_table:
        lines.append(",".join(
            [str(rec.index), str(rec.origin[0]), str(rec.origin[1]), repr(rec.ig)]
            + [repr(float(v)) for v in rec.marginal]
            + [repr(float(v)) for v in rec.pmi]
        ))
    artifacts[f"{prefix}patches.csv"] = ("\n".join(lines) + "\n").encode()
    summary = {
        "classes": list(result.classes),
        "original_prediction": [float(v) for v in result.original_prediction.probs],
    }
    return artifacts, {"maps": maps, "summary": summary}


def cmd_explain(config: dict, out_dir: Path) -> dict[str, bytes]:
    image = load_image(config["image"])
    classifier = _open_classifier(config["classifier"], config["timeout"])
    classes = _parse_classes(config["classes"])
    try:
        ks = config["k_values"]
        ns = config["n_values"]
        sweep = len(ks) > 1 or len(ns) > 1
        artifacts: dict[str, bytes] = {}
        setting_maps = {}
        for k in ks:
            sampler = _open_sampler(config["sampler"], k, image.channels, config["timeout"])
            try:
                for n in ns:
                    cfg = EngineConfig(
                        k=k, n_samples=n, stride=config["stride"], eps=config["eps"],
                        classes=classes, seed=config["seed"],
                    )
                    prefix = f"K{k}_N{n}/" if sweep else ""
                    part, extras = _run_single_explain(
                        image, classifier, sampler, cfg, config["workers"],
                        config["alpha"], prefix)
                    artifacts.update(part)
                    setting_maps[(k, n)] = extras["maps"]
            finally:
                if hasattr(sampler, "close"):
                    sampler.close()
        if sweep:
            settings = [(k, n) for k in ks for n in ns]
            shared = sorted(set.intersection(*[set(m) for m in setting_maps.values()]))
            for name in shared:
                rows = ["setting," + ",".join(f"K{k}_N{n}" for k, n in settings)]
                for ka, na in settings:
                    cells = []
                    for kb, nb in settings:
                        val = pearson(setting_maps[(ka, na)][name], setting_maps[(kb, nb)][name])
                        cells.append(repr(val))
                    rows.append(f"K{ka}_N{na}," + ",".join(cells))
                artifacts[f"sweep_pearson_{name}.csv"] = ("\n".join(rows) + "\n").encode()
        return artifacts
    finally:
        if hasattr(classifier, "close"):
            classifier.close()


# --------------------------------------------------------------- fit-sampler

def _load_image_dir(dir_path: str) -> list:
    root = Path(dir_path)
    if not root.is_dir():
        raise CliError(3, f"{dir_path}: not a directory")
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not paths:
        raise CliError(3, f"{dir_path}: found 0 images (need .png/.ppm/.pgm)")
    return [load_image(p) for p in paths]


def cmd_fit_sampler(config: dict, out_path: Path) -> dict[str, bytes]:
    images = _load_image_dir(config["data"])
    descriptor = DescriptorConfig(cells=config["cells"], levels=config["levels"])
    if config["kind"] == "gaussian":
        model = fit_conditional_gaussian(
            images, config["k"], descriptor=descriptor,
            jitter=config["jitter"], stride=config["stride"],
        )
    elif config["kind"] == "empirical":
        model = build_empirical_sampler(
            images, config["k"], descriptor=descriptor,
            max_per_bucket=config["max_per_bucket"], min_patches=config["min_patches"],
            stride=config["stride"], seed=config["seed"],
        )
    else:
        raise CliError(2, f"--kind must be gaussian or empirical, got {config['kind']!r}")
    return {out_path.name: sampler_bytes(model)}


# ------------------------------------------------------------------ evaluate

def cmd_evaluate(config: dict, out_dir: Path) -> dict[str, bytes]:
    amap = load_map(config["map"])
    image = load_image(config["image"])
    classifier = _open_classifier(config["classifier"], config["timeout"])
    try:
        class_index = config["class_index"]
        if class_index is None:
            class_index = amap.class_index
        if class_index is None:
            raise CliError(2, "--class is required for class-independent (ig) maps")
        fill = config["fill"]
        if isinstance(fill, str) and fill.startswith("sampler:"):
            fill = load_sampler(fill[len("sampler:"):])
        curve = perturbation_curve(
            classifier, image, amap, class_index,
            order=config["order"], fill=fill, steps=config["steps"],
            only_negative=config["only_negative"], seed=config["seed"],
        )
        area = auc(curve)
        report = {
            "format": "infoattr-eval-v1",
            "auc": area,
            "class": int(class_index),
            "order": curve.order,
            "fill": curve.fill,
            "only_negative": config["only_negative"],
            "steps": config["steps"],
            "eligible_pixels": curve.eligible_pixels,
            "total_pixels": curve.total_pixels,
            "initial_probability": float(curve.probabilities[0]),
            "final_probability": float(curve.probabilities[-1]),
        }
        return {
            "curve.csv": curve.to_csv().encode(),
            "report.json": (json.dumps(report, sort_keys=True, indent=2) + "\n").encode(),
        }
    finally:
        if hasattr(classifier, "close"):
            classifier.close()


# -------------------------------------------------------------------- sanity

def cmd_sanity(config: dict, out_dir: Path) -> dict[str, bytes]:
    if not config["classifier"].startswith("builtin:"):
        raise CliError(2, "sanity requires a builtin:<linear.json> classifier "
                          "(parameter randomization needs access to the weights)")
    model = load_linear_model(config["classifier"][len("builtin:"):])
    images = _load_image_dir(config["images"])
    sampler = _open_sampler(config["sampler"], config["k"], images[0].channels, config["timeout"])
    cfg = EngineConfig(k=config["k"], n_samples=config["n"],
                       classes=_parse_classes(config["classes"]), seed=config["seed"])

    def factory(fraction: float) -> LinearSoftmaxModel:
        return randomize_parameters(model, fraction, config["seed"])

    report = sanity_param_randomization(
        factory, sampler, images, config["fractions"], cfg, workers=config["workers"]
    )
    return {
        "report.json": (json.dumps(report.to_json_dict(), sort_keys=True, indent=2) + "\n").encode(),
        "report.csv": report.to_csv().encode(),
    }


# --------------------------------------------------------------------- rerun

def _inputs_for(command: str, config: dict) -> dict:
    keys = {"explain": ("image", "classifier", "sampler"),
            "evaluate": ("map", "image", "classifier"),
            "sanity": ("classifier", "sampler")}.get(command, ())
    inputs = {key: _hash_input(config[key]) for key in keys}
    if command == "sanity":
        inputs["images"] = {"spec": config["images"]}
    return inputs


_RUNNERS = {
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "sanity": cmd_sanity,
}


def cmd_rerun(manifest_path: str, out_dir: Path) -> tuple[str, dict, dict[str, bytes]]:
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{manifest_path}: not a manifest ({e})") from e
    if manifest.get("format") != MANIFEST_TAG:
        raise FormatError(f"{manifest_path}: expected format tag {MANIFEST_TAG!r}")
    command = manifest["command"]
    config = manifest["config"]
    for name, entry in manifest.get("inputs", {}).items():
        if "sha256" in entry:
            path = _input_path(entry["spec"])
            if path is not None and _sha256(path) != entry["sha256"]:
                raise CliError(3, f"input {name} ({path}) changed since the recorded run")
    if command == "fit-sampler":
        out_file = out_dir / Path(config["out_name"]).name
        artifacts = cmd_fit_sampler(config, out_file)
        return command, config, artifacts
    if command not in _RUNNERS:
        raise CliError(2, f"manifest command {command!r} cannot be rerun")
    return command, config, _RUNNERS[command](config, out_dir)


# --------------------------------------------------------------------- main

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="infoattr",
        description="Information-theoretic attribution maps for black-box classifiers",
    )
    parser.add_argument("--version", action="version", version=f"infoattr {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explain", help="PMI / IG attribution maps for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--classifier", required=True,
                   help="builtin:<linear.json> | exec:<command> | tcp:<host:port>")
    p.add_argument("--sampler", required=True,
                   help="<model.smp> | reference:<byte[,b,b]> | exec:<command> | tcp:<host:port>")
    p.add_argument("--K", default="8", help="patch size; comma list sweeps settings")
    p.add_argument("--N", default="8", help="MC samples; comma list sweeps settings")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--eps", type=float, default=1e-13)
    p.add_argument("--classes", default="top:1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.5, help="overlay blend weight")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-sampler", help="fit a gaussian or empirical sampler to an image dir")
    p.add_argument("--kind", required=True, choices=["gaussian", "empirical"])
    p.add_argument("--data", required=True, help="directory of training images")
    p.add_argument("--K", type=int, default=8)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--cells", type=int, default=8)
    p.add_argument("--levels", type=int, default=16)
    p.add_argument("--jitter", type=float, default=1e-6)
    p.add_argument("--max-per-bucket", type=int, default=64)
    p.add_argument("--min-patches", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .smp path")

    p = sub.add_parser("evaluate", help="perturbation curve + AUC for a saved map")
    p.add_argument("--map", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--class", dest="class_index", type=int, default=None)
    p.add_argument("--order", choices=["descending", "ascending"], default="descending")
    p.add_argument("--only-negative", action="store_true")
    p.add_argument("--fill", default="mean",
                   help="gray | mean | <byte> | <b,b,b> | sampler:<model.smp>")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sanity", help="parameter-randomization sanity table")
    p.add_argument("--classifier", required=True, help="builtin:<linear.json>")
    p.add_argument("--sampler", required=True)
    p.add_argument("--images", required=True, help="directory of evaluation images")
    p.add_argument("--fractions", default="0,0.5,1", help="must include 0 and 1")
    p.add_argument("--K", type=int, default=8)
    p.add_argument("--N", type=int, default=8)
    p.add_argument("--classes", default="top:1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("rerun", help="reproduce a recorded run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def _dispatch(args) -> int:
    start = time.monotonic()
    if args.command == "explain":
        ks = _parse_int_list(args.K, "--K")
        ns = _parse_int_list(args.N, "--N")
        if any(k < 1 for k in ks) or any(n < 1 for n in ns):
            raise CliError(2, "--K and --N values must be >= 1")
        config = {
            "image": args.image, "classifier": args.classifier, "sampler": args.sampler,
            "k_values": ks, "n_values": ns, "stride": args.stride, "eps": args.eps,
            "classes": args.classes, "seed": args.seed,
            "alpha": args.alpha, "workers": args.workers or _default_workers(),
            "timeout": args.timeout,
        }
        out_dir = Path(args.out)
        artifacts = cmd_explain(config, out_dir)
        artifacts["manifest.json"] = _manifest_bytes(
            "explain", config, _inputs_for("explain", config), args.seed,
            time.monotonic() - start)
        _write_artifacts(out_dir, artifacts)
        return 0

    if args.command == "fit-sampler":
        out_path = Path(args.out)
        config = {
            "kind": args.kind, "data": args.data, "k": args.K, "stride": args.stride,
            "cells": args.cells, "levels": args.levels, "jitter": args.jitter,
            "max_per_bucket": args.max_per_bucket, "min_patches": args.min_patches,
            "seed": args.seed, "out_name": out_path.name,
        }
        artifacts = cmd_fit_sampler(config, out_path)
        inputs = {"data": {"spec": args.data}}
        artifacts[out_path.name + ".manifest.json"] = _manifest_bytes(
            "fit-sampler", config, inputs, args.seed, time.monotonic() - start)
        _write_artifacts(out_path.parent if out_path.parent != Path("") else Path("."), artifacts)
        return 0

    if args.command == "evaluate":
        config = {
            "map": args.map, "image": args.image, "classifier": args.classifier,
            "class_index": args.class_index, "order": args.order,
            "only_negative": args.only_negative, "fill": args.fill,
            "steps": args.steps, "seed": args.seed, "timeout": args.timeout,
        }
        if args.steps < 1:
            raise CliError(2, "--steps must be >= 1")
        out_dir = Path(args.out)
        artifacts = cmd_evaluate(config, out_dir)
        artifacts["manifest.json"] = _manifest_bytes(
            "evaluate", config, _inputs_for("evaluate", config), args.seed,
            time.monotonic() - start)
        _write_artifacts(out_dir, artifacts)
        return 0

    if args.command == "sanity":
        try:
            fractions = [float(p) for p in args.fractions.split(",")]
        except ValueError:
            raise CliError(2, f"--fractions must be comma-separated floats, got {args.fractions!r}")
        config = {
            "classifier": args.classifier, "sampler": args.sampler, "images": args.images,
            "fractions": fractions, "k": args.K, "n": args.N,
            "classes": args.classes, "seed": args.seed,
            "workers": args.workers or _default_workers(), "timeout": args.timeout,
        }
        out_dir = Path(args.out)
        artifacts = cmd_sanity(config, out_dir)
        artifacts["manifest.json"] = _manifest_bytes(
            "sanity", config, _inputs_for("sanity", config), args.seed,
            time.monotonic() - start)
        _write_artifacts(out_dir, artifacts)
        return 0

    if args.command == "rerun":
        out_dir = Path(args.out)
        command, config, artifacts = cmd_rerun(args.manifest, out_dir)
        if command == "fit-sampler":
            name = Path(config["out_name"]).name
            artifacts[name + ".manifest.json"] = _manifest_bytes(
                command, config, {"data": {"spec": config["data"]}},
                config.get("seed", 0), time.monotonic() - start)
        else:
            artifacts["manifest.json"] = _manifest_bytes(
                command, config, _inputs_for(command, config),
                config.get("seed", 0), time.monotonic() - start)
        _write_artifacts(out_dir, artifacts)
        return 0

    raise CliError(2, f"unknown command {args.command!r}")


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        code = _dispatch(args)
    except CliError as e:
        print(f"infoattr: {e}", file=sys.stderr)
        code = e.code
    except ProtocolError as e:
        print(f"infoattr: protocol error: {e}", file=sys.stderr)
        code = 4
    except (FormatError, FileNotFoundError, PermissionError, IsADirectoryError) as e:
        print(f"infoattr: {e}", file=sys.stderr)
        code = 3
    except (GeometryError, ValueError) as e:
        print(f"infoattr: invalid arguments: {e}", file=sys.stderr)
        code = 2
    except InfoAttrError as e:
        print(f"infoattr: {e}", file=sys.stderr)
        code = 2
    except OSError as e:
        print(f"infoattr: I/O error: {e}", file=sys.stderr)
        code = 3
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
