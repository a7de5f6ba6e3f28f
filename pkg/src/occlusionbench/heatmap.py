"""Volumetric heatmaps and their decoding into camera-space poses.

A heatmap is a J x D x H x W score grid per frame. The x/y axes span the
crop image, the depth axis spans ``depth_span_mm`` (2 m by default, 16
voxels of 125 mm) of depth *relative to the root joint*, with zero
anchored at the volume center so the representable range is symmetric.
Soft-argmax turns scores into continuous voxel coordinates; decoding
maps those through the crop transform and back-projects with the true
root depth supplied by an oracle.

This toolkit consumes heatmaps, it does not produce them. The expected
producer layout is a network head with J*D output channels over an HxW
spatial grid, reshaped to (J, D, H, W) in row-major order, which is also
exactly the score order of the ``VHM1`` file format below.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datamodel import Pose3D
from .errors import DecodeError, HeatmapFormatError, OutOfVolumeError, ValidationError
from .geometry import CameraIntrinsics, CropTransform, backproject, inverse_warp_point, project, warp_point

MAGIC = b"VHM1"
DEFAULT_SHAPE = (16, 16, 16)  # (D, H, W)
DEFAULT_DEPTH_SPAN_MM = 2000.0


@dataclass(frozen=True)
class VolumetricHeatmap:
    """Scores of shape (J, D, H, W) plus the coordinate semantics."""

    scores: np.ndarray
    crop_size: int = 256
    depth_span_mm: float = DEFAULT_DEPTH_SPAN_MM

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 4:
            raise ValidationError(f"heatmap scores must have shape (J, D, H, W), got {scores.shape}")
        if min(scores.shape) < 1:
            raise ValidationError("all heatmap dimensions must be >= 1")
        if not np.all(np.isfinite(scores)):
            raise ValidationError("heatmap scores contain non-finite values")
        if self.crop_size <= 0 or self.depth_span_mm <= 0:
            raise ValidationError("crop_size and depth_span_mm must be positive")
        object.__setattr__(self, "scores", scores)

    @property
    def num_joints(self) -> int:
        return self.scores.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.scores.shape[1:]


def soft_argmax(heatmap: VolumetricHeatmap | np.ndarray) -> np.ndarray:
    """Softmax-weighted expected voxel coordinate per joint.

    The softmax runs jointly over the whole D*H*W volume (max-subtracted
    for stability) and coordinates sit at voxel centers, so the result
    for axis length N lies strictly inside (0, N). Returns (J, 3) in
    (d, h, w) order.
    """
    scores = heatmap.scores if isinstance(heatmap, VolumetricHeatmap) else np.asarray(heatmap, dtype=np.float64)
    j, d, h, w = scores.shape
    flat = scores.reshape(j, -1)
    flat = flat - flat.max(axis=1, keepdims=True)
    weights = np.exp(flat)
    weights /= weights.sum(axis=1, keepdims=True)
    probs = weights.reshape(j, d, h, w)

    centers_d = np.arange(d) + 0.5
    centers_h = np.arange(h) + 0.5
    centers_w = np.arange(w) + 0.5
    out = np.empty((j, 3))
    out[:, 0] = probs.sum(axis=(2, 3)) @ centers_d
    out[:, 1] = probs.sum(axis=(1, 3)) @ centers_h
    out[:, 2] = probs.sum(axis=(1, 2)) @ centers_w
    return out


def decode_pose(
    heatmap: VolumetricHeatmap,
    crop_transform: CropTransform,
    camera: CameraIntrinsics,
    root_depth_mm: float,
    root_index: int | None = None,
) -> Pose3D:
    """Decode a heatmap into a camera-space pose using the oracle root depth.

    Soft-argmax x/y are scaled to crop pixels, depth is root-relative
    with zero at the volume center, crop pixels map back to the original
    camera through the inverse crop homography and are back-projected at
    each joint's absolute depth. When ``root_index`` is given, that
    joint's depth is pinned to ``root_depth_mm`` exactly.
    """
    if root_depth_mm <= 0:
        raise ValidationError("root_depth_mm must be positive")
    if crop_transform.crop_size != heatmap.crop_size:
        raise ValidationError(
            f"crop transform size {crop_transform.crop_size} does not match heatmap crop size {heatmap.crop_size}"
        )
    d, h, w = heatmap.shape
    voxel = soft_argmax(heatmap)
    u = voxel[:, 2] * heatmap.crop_size / w
    v = voxel[:, 1] * heatmap.crop_size / h
    dz = (voxel[:, 0] / d - 0.5) * heatmap.depth_span_mm
    z = root_depth_mm + dz
    if root_index is not None:
        z[root_index] = root_depth_mm
    bad = np.nonzero(z <= 0)[0]
    if bad.size:
        raise DecodeError(f"decoded non-positive depth for joint(s) {bad.tolist()}")
    original_px = inverse_warp_point(crop_transform, np.stack([u, v], axis=1))
    return Pose3D(backproject(camera, original_px, z))


def encode_gaussian(
    pose: Pose3D,
    crop_transform: CropTransform,
    camera: CameraIntrinsics,
    root_depth_mm: float,
    sigma_voxels: float = 1.0,
    shape: tuple[int, int, int] = DEFAULT_SHAPE,
    depth_span_mm: float = DEFAULT_DEPTH_SPAN_MM,
) -> VolumetricHeatmap:
    """Test-fixture inverse of ``decode_pose``.

    Places one isotropic Gaussian (as log-scores, so softmax weights are
    the Gaussian) per joint at the joint's continuous voxel position.
    The argmax voxel is the one whose center is nearest the target.
    Raises ``OutOfVolumeError`` for joints outside the volume so callers
    can skip the frame.
    """
    if sigma_voxels <= 0:
        raise ValidationError("sigma_voxels must be positive")
    if root_depth_mm <= 0:
        raise ValidationError("root_depth_mm must be positive")
    d, h, w = shape
    crop_size = crop_transform.crop_size

    crop_px = warp_point(crop_transform, project(camera, pose.joints_mm))
    targets = np.empty((pose.num_joints, 3))
    targets[:, 0] = ((pose.joints_mm[:, 2] - root_depth_mm) / depth_span_mm + 0.5) * d
    targets[:, 1] = crop_px[:, 1] * h / crop_size
    targets[:, 2] = crop_px[:, 0] * w / crop_size
    for j, (td, th, tw) in enumerate(targets):
        if not (0 <= td <= d and 0 <= th <= h and 0 <= tw <= w):
            raise OutOfVolumeError(
                f"joint {j} falls outside the heatmap volume (voxel coords {td:.2f}, {th:.2f}, {tw:.2f})",
                joint_index=j,
            )

    centers_d = (np.arange(d) + 0.5)[:, None, None]
    centers_h = (np.arange(h) + 0.5)[None, :, None]
    centers_w = (np.arange(w) + 0.5)[None, None, :]
    scores = np.empty((pose.num_joints, d, h, w))
    inv = 1.0 / (2.0 * sigma_voxels**2)
    for j in range(pose.num_joints):
        dist2 = (
            (centers_d - targets[j, 0]) ** 2
            + (centers_h - targets[j, 1]) ** 2
            + (centers_w - targets[j, 2]) ** 2
        )
        scores[j] = -dist2 * inv
    return VolumetricHeatmap(scores=scores, crop_size=crop_size, depth_span_mm=depth_span_mm)


def l1_loss(pred: Pose3D, gt: Pose3D) -> float:
    """Mean absolute coordinate difference (mm), averaged over joints and axes."""
    if pred.num_joints != gt.num_joints:
        raise ValidationError(f"joint count mismatch: {pred.num_joints} vs {gt.num_joints}")
    return float(np.abs(pred.joints_mm - gt.joints_mm).mean())


def write_heatmap(path, heatmap: VolumetricHeatmap) -> None:
    """Serialize one heatmap: magic, u32le J D H W, f32le scores, JSON trailer."""
    j, (d, h, w) = heatmap.num_joints, heatmap.shape
    trailer = json.dumps({"crop_size": heatmap.crop_size, "depth_span_mm": heatmap.depth_span_mm})
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", j, d, h, w))
        fh.write(heatmap.scores.astype("<f4").tobytes(order="C"))
        fh.write(trailer.encode("utf-8"))


def read_heatmap(path) -> VolumetricHeatmap:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"heatmap file not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise HeatmapFormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 20:
        raise HeatmapFormatError(f"{path}: truncated header")
    j, d, h, w = struct.unpack("<4I", blob[4:20])
    n_bytes = j * d * h * w * 4
    if len(blob) < 20 + n_bytes:
        raise HeatmapFormatError(f"{path}: truncated score block")
    scores = np.frombuffer(blob[20 : 20 + n_bytes], dtype="<f4").reshape(j, d, h, w)
    try:
        trailer = json.loads(blob[20 + n_bytes :].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise HeatmapFormatError(f"{path}: bad JSON trailer: {exc}") from exc
    return VolumetricHeatmap(
        scores=scores.astype(np.float64),
        crop_size=int(trailer["crop_size"]),
        depth_span_mm=float(trailer["depth_span_mm"]),
    )
