"""Command-line front end.

Every command is driven by explicit flags (optionally defaulted from a
JSON config file) and a mandatory seed wherever randomness is involved,
so reruns with identical inputs produce byte-identical outputs; wall
clock timestamps are confined to the run-metadata JSON. Exit codes: 0
success, 2 validation errors, 3 runtime failures, 4 I/O errors.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import __version__
from .augment import AugmentParams
from .datamodel import load_manifest, load_poses_jsonl
from .errors import ToolkitError, ValidationError
from .geometry import BoundingBox, make_crop_transform, warp_bbox, warp_image
from .heatmap import decode_pose, read_heatmap
from .images import read_image, write_image
from .metrics import ErrorRecord, aggregate, write_aggregate_csv, write_records_jsonl
from .occlusion import (
    KINDS,
    OccluderMaskSet,
    OcclusionSpec,
    calibrate_distributions,
    composite,
    generate,
    load_object_library,
    measure_degree,
)
from .seeding import derive_seed
from .sweep import (
    DEFAULT_DEGREES,
    MATRIX_DEGREES,
    emit_report,
    make_reference_predictor,
    run_degree_sweep,
    run_matrix,
    write_sweep_outputs,
)
from .synthetic import SyntheticConfig, generate_synthetic_dataset

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_IO = 4

_OUT_ENV = "OCCLUSIONBENCH_OUT"


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except OSError as exc:
            click.echo(f"i/o error: {exc}", err=True)
            sys.exit(EXIT_IO)
        except ToolkitError as exc:
            click.echo(f"runtime error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)

    return wrapper


def _default_out(out):
    if out is not None:
        return Path(out)
    env = os.environ.get(_OUT_ENV)
    if env:
        return Path(env)
    raise ValidationError(f"--out is required (or set {_OUT_ENV})")


def _load_config(config_path):
    if config_path is None:
        return {}
    cfg = json.loads(Path(config_path).read_text())
    if not isinstance(cfg, dict):
        raise ValidationError("config file must hold a JSON object")
    if "augmentation" in cfg and cfg["augmentation"] is not None:
        cfg["augmentation"] = AugmentParams.from_dict(cfg["augmentation"])
    return cfg


def _pick(flag_value, cfg, key, fallback=None):
    """Flags take precedence over the config file, which beats the default."""
    if flag_value is not None:
        return flag_value
    if key in cfg and cfg[key] is not None:
        return cfg[key]
    return fallback


def _parse_degrees(text):
    try:
        degrees = tuple(float(tok) for tok in str(text).split(",") if tok.strip())
    except ValueError as exc:
        raise ValidationError(f"bad degree list {text!r}") from exc
    if not degrees:
        raise ValidationError("degree list is empty")
    return degrees


def _parse_kinds(text):
    kinds = tuple(tok.strip() for tok in str(text).split(",") if tok.strip())
    for kind in kinds:
        if kind not in KINDS:
            raise ValidationError(f"unknown occlusion kind {kind!r}, expected one of {KINDS}")
    if not kinds:
        raise ValidationError("kind list is empty")
    return kinds


def _load_library(path, required_for):
    if path is None:
        if required_for:
            raise ValidationError(f"--library is required for occlusion kinds {sorted(required_for)}")
        return None
    return load_object_library(path)


def _build_predictor(spec: dict, manifest):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind is None:
        raise ValidationError("predictor spec needs a 'kind'")
    if kind == "nn_baseline":
        train_path = spec.pop("train_manifest", None)
        if train_path is None:
            raise ValidationError("nn_baseline predictor needs 'train_manifest'")
        spec["train_manifest"] = load_manifest(train_path)
    return make_reference_predictor(kind, root_index=manifest.skeleton.root_index, **spec)


@click.group()
@click.version_option(version=__version__, prog_name="occlusionbench")
def main():
    """Occlusion-robustness evaluation toolkit for 3D human pose estimators."""


@main.command("synth-data")
@click.option("--frames", type=click.IntRange(min=1), required=True, help="Number of frames to generate.")
@click.option("--seed", type=int, required=True, help="RNG seed; same seed, same bytes.")
@click.option("--out", type=click.Path(), default=None, help="Output directory.")
@click.option("--image-size", type=click.IntRange(min=64), default=512, show_default=True)
@_handle_errors
def synth_data(frames, seed, out, image_size):
    """Generate a synthetic stick-figure dataset (manifest + PNG frames)."""
    out_dir = _default_out(out)
    config = SyntheticConfig(num_frames=frames, seed=seed, image_size=image_size)
    manifest = generate_synthetic_dataset(config, out_dir)
    click.echo(f"wrote {len(manifest)} frames to {out_dir}")


@main.command("occlude")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--kind", type=click.Choice([k for k in KINDS if k != "none"]), required=True)
@click.option("--degree", type=click.FloatRange(min=0.0, max=0.7), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--library", "library_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--crop-size", type=click.IntRange(min=16), default=256, show_default=True)
@click.option("--coverage", type=click.FloatRange(min=0.1, max=1.0), default=0.8, show_default=True)
@_handle_errors
def occlude(manifest_path, kind, degree, seed, library_path, out, crop_size, coverage):
    """Write occluded person crops plus a JSONL of measured degrees."""
    out_dir = _default_out(out)
    manifest = load_manifest(manifest_path)
    library = _load_library(library_path, {kind} & {"objects", "mixture"})
    crops_dir = out_dir / "crops"
    measurements = []
    for frame in manifest.frames:
        image = read_image(manifest.image_path(frame))
        transform = make_crop_transform(frame.camera, frame.bbox, crop_size, coverage)
        crop = warp_image(transform, image)
        bbox_crop = warp_bbox(transform, frame.bbox)
        if degree > 0:
            spec = OcclusionSpec(
                kind=kind, target_degree=degree,
                seed=derive_seed(seed, frame.frame_id, kind, int(round(degree * 1000))),
            )
            masks = generate(spec, bbox_crop, library=library, image_size=(crop_size, crop_size))
            crop = composite(crop, masks, library=library)
        else:
            masks = OccluderMaskSet(masks=(), fill="black", image_size=(crop_size, crop_size))
        measured = measure_degree(masks, bbox_crop)
        write_image(crops_dir / f"{frame.frame_id:06d}.png", crop)
        measurements.append(
            {
                "frame_id": frame.frame_id,
                "kind": kind,
                "target_degree": degree,
                "occluded_fraction": measured.occluded_fraction,
                "occluded_pixels": measured.occluded_pixel_count,
                "bbox_pixels": measured.bbox_pixel_count,
            }
        )
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "measurements.jsonl").open("w") as fh:
        for m in measurements:
            fh.write(json.dumps(m))
            fh.write("\n")
    click.echo(f"wrote {len(measurements)} occluded crops to {crops_dir}")


@main.command("eval")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), required=True)
@click.option("--poses", "poses_path", type=click.Path(exists=True), default=None,
              help="JSONL of {frame_id, joints_mm} predictions.")
@click.option("--heatmaps", "heatmaps_dir", type=click.Path(exists=True), default=None,
              help="Directory of <frame_id>.vhm volumetric heatmap files.")
@click.option("--root-depth-source", type=click.Choice(["oracle"]), default="oracle", show_default=True)
@click.option("--out", type=click.Path(), default=None)
@click.option("--coverage", type=click.FloatRange(min=0.1, max=1.0), default=0.8, show_default=True)
@_handle_errors
def eval_cmd(manifest_path, poses_path, heatmaps_dir, root_depth_source, out, coverage):
    """Score predictions against ground truth: per-frame JSONL + per-action CSV."""
    if (poses_path is None) == (heatmaps_dir is None):
        raise ValidationError("provide exactly one of --poses or --heatmaps")
    out_dir = _default_out(out)
    manifest = load_manifest(manifest_path)
    root_index = manifest.skeleton.root_index

    predictions = {}
    if poses_path is not None:
        predictions = load_poses_jsonl(poses_path)

    records = []
    for frame in manifest.frames:
        if poses_path is not None:
            if frame.frame_id not in predictions:
                raise ValidationError(f"no predicted pose for frame_id {frame.frame_id}")
            pose = predictions[frame.frame_id]
        else:
            path = Path(heatmaps_dir) / f"{frame.frame_id:06d}.vhm"
            if not path.exists():
                raise ValidationError(f"no heatmap file for frame_id {frame.frame_id} ({path.name})")
            heatmap = read_heatmap(path)
            transform = make_crop_transform(frame.camera, frame.bbox, heatmap.crop_size, coverage)
            pose = decode_pose(
                heatmap, transform, frame.camera,
                frame.pose_gt.root_depth(root_index), root_index=root_index,
            )
        records.append(
            ErrorRecord.from_poses(
                pose, frame.pose_gt, root_index, frame.frame_id, frame.action, "none", 0.0
            )
        )

    write_records_jsonl(records, out_dir / "records.jsonl")
    write_aggregate_csv(aggregate(records, group_by=("action",)), out_dir / "per_action.csv")
    overall = float(np.mean([r.mpjpe_mm for r in records]))
    click.echo(f"evaluated {len(records)} frames, overall MPJPE {overall:.3f} mm")


def _sweep_common(manifest_path, cfg, kinds, degrees, seed, library_path):
    manifest = load_manifest(_pick(manifest_path, cfg, "manifest"))
    kinds = _parse_kinds(_pick(kinds, cfg, "kinds", "circles,single_rectangle,rectangles,bars"))
    seed = _pick(seed, cfg, "seed")
    if seed is None:
        raise ValidationError("--seed is required for sweeps")
    library = _load_library(
        _pick(library_path, cfg, "library"), set(kinds) & {"objects", "mixture"}
    )
    return manifest, kinds, int(seed), library, degrees


@main.command("sweep")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--predictor", "predictor_kind", default=None,
              help="oracle | noisy_oracle | occlusion_mock | nn_baseline")
@click.option("--kinds", default=None, help="Comma-separated occlusion kinds.")
@click.option("--degrees", default=None, help="Comma-separated degrees in [0, 0.7].")
@click.option("--seed", type=int, default=None)
@click.option("--library", "library_path", type=click.Path(exists=True), default=None)
@click.option("--sigma-mm", type=float, default=None, help="noisy_oracle noise level.")
@click.option("--base-mm", type=float, default=None, help="occlusion_mock base error.")
@click.option("--sensitivity-mm", type=float, default=None, help="occlusion_mock occlusion gain.")
@click.option("--train-manifest", type=click.Path(exists=True), default=None, help="nn_baseline training data.")
@click.option("--crop-size", type=click.IntRange(min=16), default=256, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@_handle_errors
def sweep_cmd(manifest_path, predictor_kind, kinds, degrees, seed, library_path,
              sigma_mm, base_mm, sensitivity_mm, train_manifest, crop_size, config_path, out):
    """Run a kind x degree robustness sweep and emit records, curves and metadata."""
    cfg = _load_config(config_path)
    out_dir = _default_out(_pick(out, cfg, "out"))
    degrees = _parse_degrees(_pick(degrees, cfg, "degrees", ",".join(str(d) for d in DEFAULT_DEGREES)))
    manifest, kinds, seed, library, degrees = _sweep_common(manifest_path, cfg, kinds, degrees, seed, library_path)

    pspec = dict(cfg.get("predictor") or {})
    if predictor_kind is not None:
        pspec["kind"] = predictor_kind
    pspec.setdefault("kind", "oracle")
    if pspec["kind"] == "noisy_oracle" and sigma_mm is not None:
        pspec["sigma_mm"] = sigma_mm
    if pspec["kind"] == "occlusion_mock":
        if base_mm is not None:
            pspec["base_mm"] = base_mm
        if sensitivity_mm is not None:
            pspec["sensitivity_mm"] = sensitivity_mm
    if pspec["kind"] == "nn_baseline" and train_manifest is not None:
        pspec["train_manifest"] = train_manifest
    predictor = _build_predictor(pspec, manifest)

    result = run_degree_sweep(
        predictor, manifest, kinds, degrees=degrees, seed=seed, library=library, crop_size=crop_size
    )
    paths = write_sweep_outputs(
        result, out_dir, seed,
        config={"kinds": list(kinds), "degrees": list(degrees), "predictor": predictor.label,
                "crop_size": crop_size},
    )
    click.echo(f"sweep done: {len(result.records)} records, {len(result.exclusions)} excluded")
    for name, p in sorted(paths.items()):
        click.echo(f"  {name}: {p}")


@main.command("matrix")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--kinds", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--library", "library_path", type=click.Path(exists=True), default=None)
@click.option("--predictor", "predictor_kind", default=None, help="Single predictor shortcut.")
@click.option("--crop-size", type=click.IntRange(min=16), default=256, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help='JSON with {"predictors": [{"kind": ..., ...}, ...]}.')
@click.option("--out", type=click.Path(), default=None)
@_handle_errors
def matrix_cmd(manifest_path, kinds, seed, library_path, predictor_kind, crop_size, config_path, out):
    """Train-augmentation x test-occlusion MPJPE matrix (degrees 10-50%)."""
    cfg = _load_config(config_path)
    out_dir = _default_out(_pick(out, cfg, "out"))
    manifest, kinds, seed, library, _ = _sweep_common(
        manifest_path, cfg, kinds, MATRIX_DEGREES, seed, library_path
    )
    specs = cfg.get("predictors")
    if predictor_kind is not None:
        specs = [{"kind": predictor_kind}]
    if not specs:
        raise ValidationError("matrix needs --predictor or a config file with 'predictors'")
    predictors = [_build_predictor(s, manifest) for s in specs]

    matrix = run_matrix(
        predictors, manifest, kinds, seed=seed, library=library, crop_size=crop_size
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    emit_report(matrix, out_dir / "matrix.csv", format="csv")
    emit_report(matrix, out_dir / "matrix.json", format="json")
    config_doc = {"kinds": list(kinds), "degrees": list(matrix.degrees),
                  "predictors": [p.label for p in predictors], "crop_size": crop_size}
    (out_dir / "run.json").write_text(json.dumps({
        "seed": seed,
        "config": config_doc,
        "config_hash": hashlib.sha256(json.dumps(config_doc, sort_keys=True).encode()).hexdigest(),
        "excluded_counts": dict(zip(matrix.predictor_labels, matrix.excluded_counts)),
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }, indent=2))
    click.echo(f"matrix written to {out_dir / 'matrix.csv'}")


@main.command("calibrate")
@click.option("--kinds", default="circles,single_rectangle,rectangles,bars")
@click.option("--degrees", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7", show_default=True)
@click.option("--samples", type=click.IntRange(min=30), default=200, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--bbox", "bbox_text", default="26,16,140,160", show_default=True,
              help="Crop-space box x,y,w,h the degrees are measured in.")
@click.option("--crop-size", type=click.IntRange(min=16), default=192, show_default=True)
@click.option("--library", "library_path", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default=None)
@_handle_errors
def calibrate_cmd(kinds, degrees, samples, seed, bbox_text, crop_size, library_path, out):
    """Check occluded-pixel-count distributions match across occluder kinds."""
    out_dir = _default_out(out)
    kinds = _parse_kinds(kinds)
    degrees = _parse_degrees(degrees)
    try:
        bx, by, bw, bh = (float(tok) for tok in bbox_text.split(","))
    except ValueError as exc:
        raise ValidationError(f"bad --bbox {bbox_text!r}, expected x,y,w,h") from exc
    bbox = BoundingBox(x=bx, y=by, w=bw, h=bh)
    library = _load_library(library_path, set(kinds) & {"objects", "mixture"})

    report = calibrate_distributions(
        kinds, degrees, bbox, samples_per_cell=samples,
        rng=np.random.default_rng(seed), library=library, image_size=(crop_size, crop_size),
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "calibration.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "degree", "mean_pixels", "std_pixels", "deviation", "flagged"])
        for c in report.cells:
            writer.writerow([c.kind, repr(c.degree), repr(c.mean_pixels), repr(c.std_pixels),
                             repr(c.deviation), int(c.flagged)])
    summary = {
        "deviation_threshold": report.deviation_threshold,
        "max_deviation": report.max_deviation,
        "flagged": [{"kind": c.kind, "degree": c.degree, "deviation": c.deviation} for c in report.flagged],
    }
    (out_dir / "calibration.json").write_text(json.dumps(summary, indent=2))
    status = "all kinds matched" if not report.flagged else f"{len(report.flagged)} cells flagged"
    click.echo(f"calibration done ({status}, max deviation {report.max_deviation:.3f})")


if __name__ == "__main__":
    main()
