"""MPJPE (mean per joint position error) and grouped aggregation.

Both poses are aligned at the root (pelvis) joint before the Euclidean
errors are averaged; no Procrustes alignment anywhere. The root joint is
counted in the mean by default, matching the 'all joints' convention,
but protocols differ so a flag is provided.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import Pose3D
from .errors import ValidationError


def root_align(pose: Pose3D, root_index: int) -> Pose3D:
    """Subtract the root joint from every joint; the root becomes (0,0,0)."""
    joints = pose.joints_mm
    if not (0 <= root_index < joints.shape[0]):
        raise ValidationError(f"root_index {root_index} out of range")
    return Pose3D(joints - joints[root_index])


def per_joint_errors(pred: Pose3D, gt: Pose3D, root_index: int) -> np.ndarray:
    """Euclidean error per joint (mm) after root-aligning both poses."""
    if pred.num_joints != gt.num_joints:
        raise ValidationError(f"joint count mismatch: {pred.num_joints} vs {gt.num_joints}")
    a = root_align(pred, root_index).joints_mm
    b = root_align(gt, root_index).joints_mm
    return np.linalg.norm(a - b, axis=1)


def mpjpe(pred: Pose3D, gt: Pose3D, root_index: int, include_root: bool = True) -> float:
    """Mean per joint position error in millimeters.

    ``include_root`` keeps the (zero-error) root joint in the mean;
    excluding it rescales the result by J/(J-1) exactly.
    """
    errors = per_joint_errors(pred, gt, root_index)
    if include_root:
        return float(errors.mean())
    mask = np.ones(len(errors), dtype=bool)
    mask[root_index] = False
    return float(errors[mask].mean())


@dataclass(frozen=True)
class ErrorRecord:
    """One evaluated frame under one occlusion condition."""

    frame_id: int
    action: str
    occlusion_kind: str
    degree: float
    mpjpe_mm: float
    per_joint_mm: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_joint_mm", tuple(float(e) for e in self.per_joint_mm))
        mean = float(np.mean(self.per_joint_mm))
        if abs(self.mpjpe_mm - mean) > 1e-9 * max(1.0, abs(mean)):
            raise ValidationError(
                f"mpjpe_mm {self.mpjpe_mm} does not equal the per-joint mean {mean}"
            )

    @classmethod
    def from_poses(
        cls, pred: Pose3D, gt: Pose3D, root_index: int,
        frame_id: int, action: str, occlusion_kind: str, degree: float,
    ) -> "ErrorRecord":
        errors = per_joint_errors(pred, gt, root_index)
        return cls(
            frame_id=frame_id, action=action, occlusion_kind=occlusion_kind, degree=degree,
            mpjpe_mm=float(errors.mean()), per_joint_mm=tuple(float(e) for e in errors),
        )

    def to_dict(self) -> dict:
        return {
            "frame_id": self.frame_id,
            "action": self.action,
            "occlusion_kind": self.occlusion_kind,
            "degree": self.degree,
            "mpjpe_mm": self.mpjpe_mm,
            "per_joint_mm": list(self.per_joint_mm),
        }


@dataclass(frozen=True)
class GroupStats:
    group: tuple
    mean_mm: float
    std_mm: float  # population standard deviation
    count: int

    @property
    def group_label(self) -> str:
        return "/".join(str(g) for g in self.group)


def aggregate(records, group_by=("action",)) -> list[GroupStats]:
    """Mean and population std of MPJPE per group, deterministically ordered.

    ``group_by`` names ErrorRecord fields, e.g. ("action",) for per-action
    tables or ("occlusion_kind", "degree") for robustness curves.
    """
    records = list(records)
    if not records:
        raise ValidationError("cannot aggregate an empty record set")
    groups: dict[tuple, list[float]] = {}
    for rec in records:
        key = tuple(getattr(rec, field) for field in group_by)
        groups.setdefault(key, []).append(rec.mpjpe_mm)
    rows = []
    for key in sorted(groups):
        values = np.asarray(groups[key], dtype=np.float64)
        rows.append(
            GroupStats(group=key, mean_mm=float(values.mean()), std_mm=float(values.std()), count=len(values))
        )
    return rows


def write_records_jsonl(records, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()))
            fh.write("\n")


def read_records_jsonl(path) -> list[ErrorRecord]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"record file not found: {path}")
    records = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        records.append(
            ErrorRecord(
                frame_id=int(d["frame_id"]), action=d["action"],
                occlusion_kind=d["occlusion_kind"], degree=float(d["degree"]),
                mpjpe_mm=float(d["mpjpe_mm"]), per_joint_mm=tuple(d["per_joint_mm"]),
            )
        )
    return records


def write_aggregate_csv(rows, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["group", "mean_mm", "std_mm", "count"])
        for row in rows:
            writer.writerow([row.group_label, repr(row.mean_mm), repr(row.std_mm), row.count])
