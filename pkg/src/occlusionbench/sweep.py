"""Occlusion-robustness sweeps: kind x degree grids, train/test matrices
and comparison reports, driven by a predictor contract.

A predictor receives the occluded crop plus the geometry needed to
decode (crop transform, intrinsics, oracle root depth) and returns
either a camera-space pose or a volumetric heatmap, which the harness
decodes. Reference predictors (oracle, noisy oracle, an occlusion-
sensitive mock with a closed-form error, and a nearest-training-pose
baseline) stand in for trained networks at desk scale; they may read the
side-channel context fields (ground truth, occluder masks) that a real
predictor must ignore.

Per-frame occlusion seeds are derived as hash(run seed, frame id, kind,
degree), so adding a kind or degree to a sweep never perturbs the other
cells, and the degree-0 column is evaluated once per frame and shared by
every kind, bit-identically.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import cv2
import numpy as np

from .datamodel import Pose3D, SequenceManifest
from .errors import ValidationError
from .geometry import (
    CameraIntrinsics,
    CropTransform,
    make_crop_transform,
    project,
    warp_bbox,
    warp_image,
    warp_point,
)
from .heatmap import VolumetricHeatmap, decode_pose
from .images import read_image
from .metrics import ErrorRecord, aggregate, write_records_jsonl
from .occlusion import (
    ObjectLibrary,
    OccluderMaskSet,
    OcclusionSpec,
    composite,
    generate,
    _union_over_rect,
)
from .seeding import derive_rng, derive_seed

DEFAULT_DEGREES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)
MATRIX_DEGREES = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class PredictionInput:
    """Everything a predictor may look at for one frame.

    ``gt_pose`` and ``occluder_masks`` are side channels for the
    reference predictors; real models must only use the image and the
    geometry fields. Fields a given predictor does not use may be None.
    """

    frame_id: int
    crop_image: np.ndarray | None = None
    crop_transform: CropTransform | None = None
    camera: CameraIntrinsics | None = None
    root_depth_mm: float | None = None
    gt_pose: Pose3D | None = None
    occluder_masks: OccluderMaskSet | None = None


class Predictor:
    """Behavioral contract: label plus predict() returning a pose or heatmap."""

    label: str = "predictor"

    def predict(self, inp: PredictionInput) -> Pose3D | VolumetricHeatmap:
        raise NotImplementedError


class OraclePredictor(Predictor):
    """Returns the ground-truth pose; every sweep mean is exactly zero."""

    def __init__(self, label: str = "oracle"):
        self.label = label

    def predict(self, inp: PredictionInput) -> Pose3D:
        if inp.gt_pose is None:
            raise ValidationError("oracle predictor needs the ground-truth side channel")
        return inp.gt_pose


class NoisyOraclePredictor(Predictor):
    """Ground truth plus isotropic Gaussian noise on every non-root joint.

    The noise is drawn per frame from a (seed, frame_id) sub-stream, so
    it ignores the pixels entirely and robustness curves come out flat.
    """

    def __init__(self, sigma_mm: float, root_index: int, seed: int = 0, label: str | None = None):
        if sigma_mm < 0:
            raise ValidationError("sigma_mm must be non-negative")
        self.sigma_mm = float(sigma_mm)
        self.root_index = root_index
        self.seed = seed
        self.label = label or f"noisy_oracle_{sigma_mm:g}mm"

    def predict(self, inp: PredictionInput) -> Pose3D:
        if inp.gt_pose is None:
            raise ValidationError("noisy oracle needs the ground-truth side channel")
        rng = derive_rng(self.seed, "noisy_oracle", inp.frame_id)
        noise = rng.normal(0.0, self.sigma_mm, size=inp.gt_pose.joints_mm.shape)
        noise[self.root_index] = 0.0
        return Pose3D(inp.gt_pose.joints_mm + noise)


# Fixed displacement directions cycled over joints; any unit vectors work,
# they only need to be deterministic so the mock has a closed form.
_MOCK_DIRECTIONS = np.array(
    [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
        [0.0, 0.0, -1.0],
    ]
)


def occluded_neighborhood_fraction(
    masks: OccluderMaskSet | None, center_px, radius_px: float, crop_size: int
) -> float:
    """Fraction of a disk around a crop-space point covered by occluders."""
    if masks is None or len(masks) == 0:
        return 0.0
    r = int(np.ceil(radius_px))
    cx, cy = float(center_px[0]), float(center_px[1])
    x0 = max(0, int(np.floor(cx - r)))
    y0 = max(0, int(np.floor(cy - r)))
    x1 = min(crop_size, int(np.ceil(cx + r)) + 1)
    y1 = min(crop_size, int(np.ceil(cy + r)) + 1)
    if x1 <= x0 or y1 <= y0:
        return 0.0
    ys, xs = np.mgrid[y0:y1, x0:x1]
    disk = (xs - cx) ** 2 + (ys - cy) ** 2 <= radius_px**2
    if not disk.any():
        return 0.0
    union = _union_over_rect(masks.masks, (x0, y0, x1, y1))
    return float((union & disk).sum()) / float(disk.sum())


class OcclusionSensitiveMock(Predictor):
    """Mock whose error grows with how occluded each joint's neighborhood is.

    Non-root joint j is displaced along a fixed unit direction by
    ``base_mm * J/(J-1) + sensitivity_mm * phi_j`` where phi_j is the
    occluded fraction of a disk around the joint's crop-space projection.
    With the root untouched, root-aligned MPJPE (root included) is exactly
    ``base_mm + sensitivity_mm * sum(phi_j, j != root)/J``: base_mm at
    degree zero, monotone in occlusion, linear in the sensitivity.
    """

    def __init__(
        self,
        base_mm: float,
        sensitivity_mm: float,
        root_index: int,
        neighborhood_radius_px: float = 12.0,
        label: str | None = None,
    ):
        if base_mm < 0 or sensitivity_mm < 0:
            raise ValidationError("base_mm and sensitivity_mm must be non-negative")
        self.base_mm = float(base_mm)
        self.sensitivity_mm = float(sensitivity_mm)
        self.root_index = root_index
        self.neighborhood_radius_px = float(neighborhood_radius_px)
        self.label = label or f"occlusion_mock_{base_mm:g}+{sensitivity_mm:g}mm"

    def joint_occlusion_fractions(self, inp: PredictionInput) -> np.ndarray:
        gt = inp.gt_pose
        crop_px = warp_point(inp.crop_transform, project(inp.camera, gt.joints_mm))
        phis = np.zeros(gt.num_joints)
        for j in range(gt.num_joints):
            phis[j] = occluded_neighborhood_fraction(
                inp.occluder_masks, crop_px[j], self.neighborhood_radius_px, inp.crop_transform.crop_size
            )
        return phis

    def predict(self, inp: PredictionInput) -> Pose3D:
        if inp.gt_pose is None:
            raise ValidationError("occlusion mock needs the ground-truth side channel")
        gt = inp.gt_pose
        n = gt.num_joints
        phis = self.joint_occlusion_fractions(inp)
        joints = gt.joints_mm.copy()
        for j in range(n):
            if j == self.root_index:
                continue
            magnitude = self.base_mm * n / (n - 1) + self.sensitivity_mm * phis[j]
            joints[j] = joints[j] + magnitude * _MOCK_DIRECTIONS[j % len(_MOCK_DIRECTIONS)]
        return Pose3D(joints)


class NearestTrainPosePredictor(Predictor):
    """Returns the training pose whose rendered crop is pixel-closest to the query.

    A crude image-matching baseline: training crops are downsampled to
    small grayscale thumbnails once, queries are matched by mean absolute
    pixel distance (ties break to the lowest frame index).
    """

    def __init__(
        self,
        train_manifest: SequenceManifest,
        crop_size: int = 256,
        coverage: float = 0.8,
        thumb_size: int = 32,
        label: str = "nn_baseline",
    ):
        if len(train_manifest.frames) == 0:
            raise ValidationError("nn_baseline needs a non-empty training manifest")
        self.label = label
        self.thumb_size = thumb_size
        self._poses: list[Pose3D] = []
        thumbs = []
        for frame in train_manifest.frames:
            image = read_image(train_manifest.image_path(frame))
            transform = make_crop_transform(frame.camera, frame.bbox, crop_size, coverage)
            crop = warp_image(transform, image)
            thumbs.append(self._thumbnail(crop))
            self._poses.append(frame.pose_gt)
        self._thumbs = np.stack(thumbs)

    def _thumbnail(self, crop: np.ndarray) -> np.ndarray:
        gray = cv2.cvtColor(crop, cv2.COLOR_RGB2GRAY)
        small = cv2.resize(gray, (self.thumb_size, self.thumb_size), interpolation=cv2.INTER_AREA)
        return small.astype(np.float64)

    def predict(self, inp: PredictionInput) -> Pose3D:
        query = self._thumbnail(inp.crop_image)
        distances = np.abs(self._thumbs - query).mean(axis=(1, 2))
        return self._poses[int(np.argmin(distances))]


def make_reference_predictor(kind: str, root_index: int = 0, seed: int = 0, **params) -> Predictor:
    """Factory for the built-in reference predictors.

    ``kind``: oracle | noisy_oracle(sigma_mm) | occlusion_mock(base_mm,
    sensitivity_mm) | nn_baseline(train_manifest).
    """
    if kind == "oracle":
        return OraclePredictor(**params)
    if kind == "noisy_oracle":
        return NoisyOraclePredictor(root_index=root_index, seed=seed, **params)
    if kind == "occlusion_mock":
        return OcclusionSensitiveMock(root_index=root_index, **params)
    if kind == "nn_baseline":
        return NearestTrainPosePredictor(**params)
    raise ValidationError(f"unknown reference predictor kind {kind!r}")


@dataclass(frozen=True)
class CurvePoint:
    degree: float
    mean_mpjpe_mm: float
    std_mpjpe_mm: float
    n_frames: int


@dataclass(frozen=True)
class RobustnessCurve:
    kind: str
    points: tuple[CurvePoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        degrees = [p.degree for p in self.points]
        if any(b <= a for a, b in zip(degrees, degrees[1:])):
            raise ValidationError("curve degrees must be strictly increasing")
        if any(p.n_frames <= 0 for p in self.points):
            raise ValidationError("every curve point needs at least one frame")

    def mean_at(self, degree: float) -> float:
        for p in self.points:
            if p.degree == degree:
                return p.mean_mpjpe_mm
        raise KeyError(f"curve has no degree {degree}")


@dataclass(frozen=True)
class TrainTestMatrix:
    """Rows: predictor labels (training augmentation); columns: test kinds.

    Every cell is the unweighted mean of that predictor/kind's per-degree
    mean MPJPEs over the same degree set (10%..50% by default).
    ``excluded_counts`` carries per-predictor frame exclusions for the
    run metadata.
    """

    predictor_labels: tuple[str, ...]
    kinds: tuple[str, ...]
    cells_mm: tuple[tuple[float, ...], ...]
    degrees: tuple[float, ...] = MATRIX_DEGREES
    excluded_counts: tuple[int, ...] = ()

    def cell(self, label: str, kind: str) -> float:
        return self.cells_mm[self.predictor_labels.index(label)][self.kinds.index(kind)]


@dataclass
class SweepResult:
    curves: list[RobustnessCurve]
    records: list[ErrorRecord]
    exclusions: list[dict]
    metadata: dict = field(default_factory=dict)


def _prepare_frame(frame, manifest, crop_size, coverage):
    image = read_image(manifest.image_path(frame))
    transform = make_crop_transform(frame.camera, frame.bbox, crop_size, coverage)
    crop = warp_image(transform, image)
    bbox_crop = warp_bbox(transform, frame.bbox)
    root_depth = frame.pose_gt.root_depth(manifest.skeleton.root_index)
    return crop, transform, bbox_crop, root_depth


def _evaluate(predictor, inp, manifest):
    result = predictor.predict(inp)
    if isinstance(result, VolumetricHeatmap):
        result = decode_pose(
            result, inp.crop_transform, inp.camera, inp.root_depth_mm,
            root_index=manifest.skeleton.root_index,
        )
    if result.num_joints != manifest.skeleton.num_joints:
        raise ValidationError(
            f"predictor returned {result.num_joints} joints, expected {manifest.skeleton.num_joints}"
        )
    return result


def run_degree_sweep(
    predictor: Predictor,
    manifest: SequenceManifest,
    kinds,
    degrees=DEFAULT_DEGREES,
    seed: int = 0,
    library: ObjectLibrary | None = None,
    crop_size: int = 256,
    coverage: float = 0.8,
) -> SweepResult:
    """Evaluate the predictor over every (kind, degree, frame) cell.

    Degree 0 means no occlusion and is computed once per frame, shared
    across kinds. Predictor failures exclude the frame from that cell
    and are reported, not scored. Frames are evaluated serially (each
    cell is independent with its own derived seed, so parallel drivers
    would produce the same records); any predictor is therefore safe
    here whether or not it tolerates concurrent invocation.
    """
    kinds = tuple(kinds)
    degrees = tuple(sorted(set(float(d) for d in degrees)))
    if not kinds or not degrees:
        raise ValidationError("sweep needs at least one kind and one degree")
    if len(manifest.frames) == 0:
        raise ValidationError("sweep needs a non-empty dataset")

    root_index = manifest.skeleton.root_index
    records: list[ErrorRecord] = []
    exclusions: list[dict] = []

    for frame in manifest.frames:
        crop, transform, bbox_crop, root_depth = _prepare_frame(frame, manifest, crop_size, coverage)

        # Degree 0 is occlusion-free, hence identical for every kind:
        # evaluate once per frame and share the pose across kinds.
        baseline: Pose3D | Exception | None = None
        if 0.0 in degrees:
            inp = PredictionInput(
                frame_id=frame.frame_id, crop_image=crop, crop_transform=transform,
                camera=frame.camera, root_depth_mm=root_depth, gt_pose=frame.pose_gt,
                occluder_masks=None,
            )
            try:
                baseline = _evaluate(predictor, inp, manifest)
            except Exception as exc:  # noqa: BLE001 - failures are data here
                baseline = exc

        for kind in kinds:
            for degree in degrees:
                if degree == 0.0:
                    if isinstance(baseline, Exception):
                        exclusions.append(
                            {"frame_id": frame.frame_id, "kind": kind, "degree": degree,
                             "error": str(baseline)}
                        )
                        continue
                    records.append(
                        ErrorRecord.from_poses(
                            baseline, frame.pose_gt, root_index,
                            frame.frame_id, frame.action, kind, 0.0,
                        )
                    )
                    continue
                cell_seed = derive_seed(seed, frame.frame_id, kind, int(round(degree * 1000)))
                spec = OcclusionSpec(kind=kind, target_degree=degree, seed=cell_seed)
                try:
                    masks = generate(
                        spec, bbox_crop, library=library, image_size=(crop_size, crop_size)
                    )
                    occluded = composite(crop, masks, library=library)
                    inp = PredictionInput(
                        frame_id=frame.frame_id, crop_image=occluded, crop_transform=transform,
                        camera=frame.camera, root_depth_mm=root_depth, gt_pose=frame.pose_gt,
                        occluder_masks=masks,
                    )
                    pose = _evaluate(predictor, inp, manifest)
                    records.append(
                        ErrorRecord.from_poses(
                            pose, frame.pose_gt, root_index,
                            frame.frame_id, frame.action, kind, degree,
                        )
                    )
                except Exception as exc:  # noqa: BLE001
                    exclusions.append(
                        {"frame_id": frame.frame_id, "kind": kind, "degree": degree, "error": str(exc)}
                    )

    curves = []
    stats = {row.group: row for row in aggregate(records, group_by=("occlusion_kind", "degree"))}
    for kind in kinds:
        points = []
        for degree in degrees:
            row = stats.get((kind, degree))
            if row is None:
                continue
            points.append(
                CurvePoint(degree=degree, mean_mpjpe_mm=row.mean_mm, std_mpjpe_mm=row.std_mm, n_frames=row.count)
            )
        curves.append(RobustnessCurve(kind=kind, points=tuple(points)))

    metadata = {
        "predictor": predictor.label,
        "seed": seed,
        "kinds": list(kinds),
        "degrees": list(degrees),
        "crop_size": crop_size,
        "coverage": coverage,
        "n_frames": len(manifest.frames),
        "n_records": len(records),
        "n_excluded": len(exclusions),
    }
    return SweepResult(curves=curves, records=records, exclusions=exclusions, metadata=metadata)


def run_matrix(
    predictors,
    manifest: SequenceManifest,
    kinds,
    seed: int = 0,
    degrees=MATRIX_DEGREES,
    library: ObjectLibrary | None = None,
    crop_size: int = 256,
    coverage: float = 0.8,
) -> TrainTestMatrix:
    """MPJPE per (predictor, test kind), averaged over the degree grid.

    Each cell is the unweighted mean of the per-degree mean MPJPEs, all
    cells over exactly the same degree set.
    """
    predictors = list(predictors)
    if not predictors:
        raise ValidationError("matrix needs at least one predictor")
    degrees = tuple(sorted(set(float(d) for d in degrees)))
    if 0.0 in degrees:
        raise ValidationError("matrix degrees must be strictly positive")
    kinds = tuple(kinds)
    rows = []
    excluded = []
    for predictor in predictors:
        result = run_degree_sweep(
            predictor, manifest, kinds, degrees=degrees, seed=seed,
            library=library, crop_size=crop_size, coverage=coverage,
        )
        by_kind = {c.kind: c for c in result.curves}
        row = []
        for kind in kinds:
            curve = by_kind[kind]
            if tuple(p.degree for p in curve.points) != degrees:
                raise ValidationError(
                    f"matrix cell ({predictor.label}, {kind}) is missing degrees; "
                    f"got {[p.degree for p in curve.points]}, need {list(degrees)}"
                )
            row.append(float(np.mean([p.mean_mpjpe_mm for p in curve.points])))
        rows.append(tuple(row))
        excluded.append(len(result.exclusions))
    return TrainTestMatrix(
        predictor_labels=tuple(p.label for p in predictors),
        kinds=kinds,
        cells_mm=tuple(rows),
        degrees=degrees,
        excluded_counts=tuple(excluded),
    )


@dataclass(frozen=True)
class ResultSet:
    """Labeled per-group MPJPE values (e.g. per-action means plus 'Avg')."""

    label: str
    values_mm: dict[str, float]


def load_result_set(path) -> ResultSet:
    d = json.loads(Path(path).read_text())
    return ResultSet(label=str(d["label"]), values_mm={str(k): float(v) for k, v in d["values_mm"].items()})


@dataclass(frozen=True)
class ComparisonRow:
    group: str
    base_mm: float
    other_mm: float
    improvement_mm: float
    improvement_pct: float


@dataclass(frozen=True)
class ComparisonReport:
    base_label: str
    other_label: str
    rows: tuple[ComparisonRow, ...]

    def row(self, group: str) -> ComparisonRow:
        for r in self.rows:
            if r.group == group:
                return r
        raise KeyError(f"comparison has no group {group!r}")


def compare_result_sets(base: ResultSet, other: ResultSet) -> ComparisonReport:
    """Absolute and relative improvement of ``other`` over ``base`` per group."""
    rows = []
    for group in base.values_mm:
        if group not in other.values_mm:
            raise ValidationError(f"result sets do not share group {group!r}")
        b = base.values_mm[group]
        o = other.values_mm[group]
        improvement = b - o
        pct = (improvement / b * 100.0) if b != 0 else 0.0
        rows.append(ComparisonRow(group=group, base_mm=b, other_mm=o, improvement_mm=improvement, improvement_pct=pct))
    return ComparisonReport(base_label=base.label, other_label=other.label, rows=tuple(rows))


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def emit_report(obj, path, format: str = "csv") -> Path:
    """Write curves, a matrix or a comparison to one file.

    Column ordering is deterministic: curves sort by (kind, degree),
    matrices keep the predictor/kind order they were built with.
    """
    path = Path(path)
    if format not in ("csv", "json"):
        raise ValidationError(f"unknown report format {format!r}")

    if isinstance(obj, (list, tuple)) and all(isinstance(c, RobustnessCurve) for c in obj) and obj:
        curves = sorted(obj, key=lambda c: c.kind)
        if format == "csv":
            rows = [
                [c.kind, repr(p.degree), repr(p.mean_mpjpe_mm), repr(p.std_mpjpe_mm), p.n_frames]
                for c in curves
                for p in c.points
            ]
            _write_csv(path, ["kind", "degree", "mean_mm", "std_mm", "n"], rows)
        else:
            doc = [
                {"kind": c.kind,
                 "points": [
                     {"degree": p.degree, "mean_mm": p.mean_mpjpe_mm, "std_mm": p.std_mpjpe_mm, "n": p.n_frames}
                     for p in c.points
                 ]}
                for c in curves
            ]
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(doc, indent=2))
        return path

    if isinstance(obj, TrainTestMatrix):
        if format == "csv":
            rows = [
                [label] + [repr(v) for v in cells]
                for label, cells in zip(obj.predictor_labels, obj.cells_mm)
            ]
            _write_csv(path, ["train_augmentation", *obj.kinds], rows)
        else:
            doc = {
                "degrees": list(obj.degrees),
                "kinds": list(obj.kinds),
                "rows": [
                    {"label": label, "cells_mm": list(cells)}
                    for label, cells in zip(obj.predictor_labels, obj.cells_mm)
                ],
            }
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(doc, indent=2))
        return path

    if isinstance(obj, ComparisonReport):
        if format == "csv":
            rows = [
                [r.group, repr(r.base_mm), repr(r.other_mm), repr(r.improvement_mm), repr(r.improvement_pct)]
                for r in obj.rows
            ]
            _write_csv(path, ["group", "base_mm", "other_mm", "improvement_mm", "improvement_pct"], rows)
        else:
            doc = {
                "base": obj.base_label,
                "other": obj.other_label,
                "rows": [
                    {"group": r.group, "base_mm": r.base_mm, "other_mm": r.other_mm,
                     "improvement_mm": r.improvement_mm, "improvement_pct": r.improvement_pct}
                    for r in obj.rows
                ],
            }
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(doc, indent=2))
        return path

    raise ValidationError(f"emit_report cannot handle {type(obj).__name__}")


def write_sweep_outputs(result: SweepResult, out_dir, seed: int, config: dict | None = None) -> dict[str, Path]:
    """Write the standard sweep artifact set: JSONL records, curve CSV and
    run metadata JSON. Timestamps only ever appear in the metadata file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "records": out_dir / "records.jsonl",
        "curves": out_dir / "curves.csv",
        "metadata": out_dir / "run.json",
    }
    write_records_jsonl(result.records, paths["records"])
    emit_report(result.curves, paths["curves"], format="csv")
    config = dict(config or {})
    config_hash = hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()
    metadata = {
        **result.metadata,
        "seed": seed,
        "config": config,
        "config_hash": config_hash,
        "exclusions": result.exclusions,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    paths["metadata"].write_text(json.dumps(metadata, indent=2))
    return paths
