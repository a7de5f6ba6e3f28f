"""Skeletons, poses, frame records, manifests and frame subsampling.

Manifests are JSON files describing a sequence: the skeleton, per-frame
camera intrinsics, person bounding box, ground-truth 3D joints (camera
space, millimeters) and the path of the rendered RGB image. Units are
declared in the file so mismatched data fails fast at load time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ManifestError, ValidationError
from .geometry import BoundingBox, CameraIntrinsics

MANIFEST_UNITS = {"length": "mm", "image": "px"}


@dataclass(frozen=True)
class Skeleton:
    """Joint layout: names, pelvis root, left/right pairs and bones."""

    joint_names: tuple[str, ...]
    root_index: int
    left_right_pairs: tuple[tuple[int, int], ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "left_right_pairs", tuple(map(tuple, self.left_right_pairs)))
        object.__setattr__(self, "edges", tuple(map(tuple, self.edges)))
        n = len(self.joint_names)
        if n == 0:
            raise ValidationError("skeleton needs at least one joint")
        if not (0 <= self.root_index < n):
            raise ValidationError(f"root_index {self.root_index} out of range for {n} joints")
        seen: set[int] = set()
        for left, right in self.left_right_pairs:
            if not (0 <= left < n and 0 <= right < n):
                raise ValidationError(f"left/right pair ({left}, {right}) out of range")
            if left == right:
                raise ValidationError(f"left/right pair maps joint {left} to itself")
            if left in seen or right in seen:
                raise ValidationError(f"joint appears in more than one left/right pair: ({left}, {right})")
            seen.update((left, right))
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise ValidationError(f"edge ({a}, {b}) out of range")

    @property
    def num_joints(self) -> int:
        return len(self.joint_names)

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "root_index": self.root_index,
            "left_right_pairs": [list(p) for p in self.left_right_pairs],
            "edges": [list(e) for e in self.edges],
        }


# Common 17-joint layout (Human3.6M-style joint set).
_H17_NAMES = (
    "pelvis",
    "left_hip", "left_knee", "left_ankle",
    "right_hip", "right_knee", "right_ankle",
    "spine", "neck", "head", "head_top",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
)
_H17_PAIRS = ((1, 4), (2, 5), (3, 6), (11, 14), (12, 15), (13, 16))
_H17_EDGES = (
    (0, 1), (1, 2), (2, 3),
    (0, 4), (4, 5), (5, 6),
    (0, 7), (7, 8), (8, 9), (9, 10),
    (8, 11), (11, 12), (12, 13),
    (8, 14), (14, 15), (15, 16),
)


def default_skeleton() -> Skeleton:
    """The default 17-joint human skeleton rooted at the pelvis."""
    return Skeleton(joint_names=_H17_NAMES, root_index=0, left_right_pairs=_H17_PAIRS, edges=_H17_EDGES)


@dataclass(frozen=True)
class Pose3D:
    """Per-joint camera-space coordinates in millimeters, shape (J, 3)."""

    joints_mm: np.ndarray

    def __post_init__(self):
        joints = np.asarray(self.joints_mm, dtype=np.float64)
        if joints.ndim != 2 or joints.shape[1] != 3:
            raise ValidationError(f"pose must have shape (J, 3), got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValidationError("pose contains non-finite coordinates")
        joints.flags.writeable = False
        object.__setattr__(self, "joints_mm", joints)

    @property
    def num_joints(self) -> int:
        return self.joints_mm.shape[0]

    def root_depth(self, root_index: int) -> float:
        return float(self.joints_mm[root_index, 2])


@dataclass(frozen=True)
class FrameRecord:
    frame_id: int
    subject: str
    action: str
    camera: CameraIntrinsics
    bbox: BoundingBox
    pose_gt: Pose3D
    image_path: str


@dataclass(frozen=True)
class SequenceManifest:
    """Ordered frames sharing one skeleton, plus optional sampling metadata.

    ``base_dir`` is where relative image paths resolve from; it is set by
    the loader and never serialized.
    """

    skeleton: Skeleton
    frames: tuple[FrameRecord, ...]
    fps: float | None = None
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        last_id = None
        for i, frame in enumerate(self.frames):
            if last_id is not None and frame.frame_id <= last_id:
                raise ManifestError(
                    f"frame_id {frame.frame_id} not strictly increasing", field=f"frames[{i}].frame_id"
                )
            last_id = frame.frame_id
            if frame.pose_gt.num_joints != self.skeleton.num_joints:
                raise ManifestError(
                    f"expected {self.skeleton.num_joints} joints, got {frame.pose_gt.num_joints}",
                    field=f"frames[{i}].joints_mm",
                )
            if frame.pose_gt.root_depth(self.skeleton.root_index) <= 0:
                raise ManifestError("root joint depth must be positive", field=f"frames[{i}].joints_mm")

    def __len__(self) -> int:
        return len(self.frames)

    def image_path(self, frame: FrameRecord) -> Path:
        p = Path(frame.image_path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise ManifestError("missing field", field=f"{path}.{key}" if path else key)
    return obj[key]


def _parse_frame(d: dict, path: str) -> FrameRecord:
    cam = _require(d, "camera", path)
    try:
        camera = CameraIntrinsics.from_dict(cam)
    except (ValidationError, KeyError, TypeError, ValueError) as exc:
        raise ManifestError(str(exc), field=f"{path}.camera") from exc
    bbox_raw = _require(d, "bbox", path)
    if not isinstance(bbox_raw, (list, tuple)) or len(bbox_raw) != 4:
        raise ManifestError("bbox must be a list [x, y, w, h]", field=f"{path}.bbox")
    try:
        bbox = BoundingBox(*(float(v) for v in bbox_raw))
    except ValidationError as exc:
        raise ManifestError(str(exc), field=f"{path}.bbox") from exc
    joints = _require(d, "joints_mm", path)
    try:
        pose = Pose3D(np.array(joints, dtype=np.float64))
    except (ValidationError, ValueError) as exc:
        raise ManifestError(str(exc), field=f"{path}.joints_mm") from exc
    return FrameRecord(
        frame_id=int(_require(d, "frame_id", path)),
        subject=str(_require(d, "subject", path)),
        action=str(_require(d, "action", path)),
        camera=camera,
        bbox=bbox,
        pose_gt=pose,
        image_path=str(_require(d, "image_path", path)),
    )


def load_manifest(path) -> SequenceManifest:
    """Load and fully validate a manifest file.

    Raises ``ManifestError`` naming the offending field on any schema or
    invariant violation.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ManifestError("manifest root must be a JSON object")

    units = data.get("units")
    if units is not None and units.get("length") != "mm":
        raise ManifestError(f"expected lengths in mm, manifest declares {units.get('length')!r}", field="units")

    skel_raw = _require(data, "skeleton", "")
    try:
        skeleton = Skeleton(
            joint_names=tuple(_require(skel_raw, "joint_names", "skeleton")),
            root_index=int(_require(skel_raw, "root_index", "skeleton")),
            left_right_pairs=tuple(map(tuple, _require(skel_raw, "left_right_pairs", "skeleton"))),
            edges=tuple(map(tuple, _require(skel_raw, "edges", "skeleton"))),
        )
    except ValidationError as exc:
        raise ManifestError(str(exc), field="skeleton") from exc

    frames_raw = _require(data, "frames", "")
    frames = [_parse_frame(f, f"frames[{i}]") for i, f in enumerate(frames_raw)]
    fps = data.get("fps")
    return SequenceManifest(
        skeleton=skeleton,
        frames=tuple(frames),
        fps=float(fps) if fps is not None else None,
        base_dir=path.parent,
    )


def save_manifest(manifest: SequenceManifest, path) -> None:
    path = Path(path)
    doc = {
        "units": MANIFEST_UNITS,
        "skeleton": manifest.skeleton.to_dict(),
        "frames": [
            {
                "frame_id": f.frame_id,
                "subject": f.subject,
                "action": f.action,
                "camera": f.camera.to_dict(),
                "bbox": f.bbox.as_list(),
                "joints_mm": f.pose_gt.joints_mm.tolist(),
                "image_path": f.image_path,
            }
            for f in manifest.frames
        ],
    }
    if manifest.fps is not None:
        doc["fps"] = manifest.fps
    path.write_text(json.dumps(doc, indent=2))


def adaptive_subsample(manifest: SequenceManifest, threshold_mm: float = 30.0) -> list[int]:
    """Keep a frame when some joint moved at least ``threshold_mm`` (Euclidean)
    since the last *kept* frame. Frame 0 is always kept.
    """
    if len(manifest.frames) == 0:
        raise ValidationError("cannot subsample an empty manifest")
    if threshold_mm <= 0:
        raise ValidationError("threshold_mm must be positive")
    kept = [0]
    reference = manifest.frames[0].pose_gt.joints_mm
    for i in range(1, len(manifest.frames)):
        joints = manifest.frames[i].pose_gt.joints_mm
        max_move = float(np.linalg.norm(joints - reference, axis=1).max())
        if max_move >= threshold_mm:
            kept.append(i)
            reference = joints
    return kept


def stride_subsample(manifest: SequenceManifest, stride: int = 64) -> list[int]:
    """Every ``stride``-th frame index, starting at 0."""
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    return list(range(0, len(manifest.frames), stride))


def save_poses_jsonl(path, poses: Iterable[tuple[int, Pose3D]]) -> None:
    """Write per-frame predicted poses as JSONL records."""
    path = Path(path)
    with path.open("w") as fh:
        for frame_id, pose in poses:
            fh.write(json.dumps({"frame_id": frame_id, "joints_mm": pose.joints_mm.tolist()}))
            fh.write("\n")


def load_poses_jsonl(path) -> dict[int, Pose3D]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"pose file not found: {path}")
    poses: dict[int, Pose3D] = {}
    for line_no, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            frame_id = int(rec["frame_id"])
            poses[frame_id] = Pose3D(np.array(rec["joints_mm"], dtype=np.float64))
        except (KeyError, ValueError, ValidationError) as exc:
            raise ManifestError(f"bad pose record on line {line_no + 1}: {exc}") from exc
    return poses
