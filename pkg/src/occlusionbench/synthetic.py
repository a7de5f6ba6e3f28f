"""Deterministic stick-figure dataset generator.

Produces desk-scale sequences: a kinematic 17-joint figure with rigid
bones moves smoothly in front of a fixed pinhole camera, each frame is
rendered as bones (thick anti-aliased lines) plus joint disks on a
uniform background, and the whole thing is written out as a manifest
plus PNG images. Rendering uses fixed-point subpixel coordinates so the
drawn joint centers match the projected ground truth to well under half
a pixel.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .datamodel import (
    FrameRecord,
    Pose3D,
    SequenceManifest,
    Skeleton,
    default_skeleton,
    save_manifest,
)
from .errors import ValidationError
from .geometry import BoundingBox, CameraIntrinsics, project
from .images import write_image

BACKGROUND_COLOR = (70, 88, 106)
BONE_COLOR = (225, 225, 225)
JOINT_COLOR = (220, 40, 40)
JOINT_RADIUS = 5
BONE_THICKNESS = 3
_SHIFT = 4  # cv2 fixed-point bits: 1/16 px coordinate resolution

# Parent index and parent-relative bone offset (mm) per joint of the
# default skeleton. Camera convention: x right, y down, z forward.
_PARENTS = (-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 9, 8, 11, 12, 8, 14, 15)
_OFFSETS = np.array(
    [
        [0.0, 0.0, 0.0],        # pelvis
        [110.0, 15.0, 0.0],     # left_hip
        [0.0, 450.0, 0.0],      # left_knee
        [0.0, 440.0, 0.0],      # left_ankle
        [-110.0, 15.0, 0.0],    # right_hip
        [0.0, 450.0, 0.0],      # right_knee
        [0.0, 440.0, 0.0],      # right_ankle
        [0.0, -260.0, 0.0],     # spine
        [0.0, -240.0, 0.0],     # neck
        [0.0, -110.0, 0.0],     # head
        [0.0, -120.0, 0.0],     # head_top
        [180.0, 30.0, 0.0],     # left_shoulder
        [10.0, 270.0, 0.0],     # left_elbow
        [0.0, 240.0, 0.0],      # left_wrist
        [-180.0, 30.0, 0.0],    # right_shoulder
        [-10.0, 270.0, 0.0],    # right_elbow
        [0.0, 240.0, 0.0],      # right_wrist
    ]
)
# Joints at which a subtree gets its own animated rotation.
_ARTICULATED = (1, 4, 8, 11, 14)

_ACTIONS = ("walk", "wave", "turn")


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings. The default figure is the 17-joint human; a
    custom skeleton also needs its kinematic tree (``parents``, per-joint
    ``bone_offsets_mm``) and which joints drive animated subtrees."""

    num_frames: int
    seed: int
    image_size: int = 512
    focal_px: float = 1000.0
    subject: str = "S01"
    fps: float = 50.0
    skeleton: Skeleton | None = None
    parents: tuple[int, ...] | None = None
    bone_offsets_mm: tuple[tuple[float, float, float], ...] | None = None
    articulated_joints: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.num_frames < 1:
            raise ValidationError("num_frames must be >= 1")
        if self.image_size < 64:
            raise ValidationError("image_size must be at least 64 px")
        custom = (self.skeleton, self.parents, self.bone_offsets_mm)
        if any(f is not None for f in custom) and any(f is None for f in custom):
            raise ValidationError(
                "a custom figure needs skeleton, parents and bone_offsets_mm together"
            )
        if self.skeleton is not None:
            n = self.skeleton.num_joints
            if len(self.parents) != n or len(self.bone_offsets_mm) != n:
                raise ValidationError("parents and bone_offsets_mm must have one entry per joint")
            roots = [j for j, p in enumerate(self.parents) if p < 0]
            if len(roots) != 1:
                raise ValidationError("the kinematic tree needs exactly one root")
            for j, p in enumerate(self.parents):
                if p >= j:
                    raise ValidationError("parents must precede children in joint order")

    def figure(self) -> tuple["Skeleton", tuple[int, ...], np.ndarray, tuple[int, ...]]:
        if self.skeleton is None:
            return default_skeleton(), _PARENTS, _OFFSETS, _ARTICULATED
        articulated = self.articulated_joints or ()
        return self.skeleton, tuple(self.parents), np.asarray(self.bone_offsets_mm, float), articulated


def _rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def sample_pose_sequence(config: SyntheticConfig) -> list[Pose3D]:
    """Smooth random articulated motion with exactly constant bone lengths.

    Every animated parameter is a sinusoid with seed-drawn amplitude,
    frequency and phase; joint positions come from forward kinematics, so
    bone lengths are preserved to rotation-matrix roundoff.
    """
    rng = np.random.default_rng(config.seed)
    _, parents, offsets, articulated = config.figure()
    n_joints = len(parents)

    center = np.array([0.0, 60.0, rng.uniform(4800.0, 5200.0)])
    trans_amp = np.array([rng.uniform(150.0, 250.0), rng.uniform(30.0, 70.0), rng.uniform(200.0, 350.0)])
    trans_freq = rng.uniform(0.01, 0.05, size=3) * 2 * np.pi
    trans_phase = rng.uniform(0.0, 2 * np.pi, size=3)

    yaw_amp = rng.uniform(0.3, 0.9)
    yaw_freq = rng.uniform(0.005, 0.03) * 2 * np.pi
    yaw_phase = rng.uniform(0.0, 2 * np.pi)

    limb_amp = rng.uniform(0.2, 0.6, size=(max(len(articulated), 1), 2))
    limb_freq = rng.uniform(0.02, 0.10, size=(max(len(articulated), 1), 2)) * 2 * np.pi
    limb_phase = rng.uniform(0.0, 2 * np.pi, size=(max(len(articulated), 1), 2))

    poses = []
    for t in range(config.num_frames):
        root_pos = center + trans_amp * np.sin(trans_freq * t + trans_phase)
        root_rot = _rot_y(yaw_amp * np.sin(yaw_freq * t + yaw_phase))

        local_rot = [np.eye(3)] * n_joints
        for k, joint in enumerate(articulated):
            ax = limb_amp[k, 0] * np.sin(limb_freq[k, 0] * t + limb_phase[k, 0])
            az = limb_amp[k, 1] * np.sin(limb_freq[k, 1] * t + limb_phase[k, 1])
            local_rot[joint] = _rot_x(ax) @ _rot_z(az)

        positions = np.zeros((n_joints, 3))
        chain_rot = [np.eye(3)] * n_joints
        for j in range(n_joints):
            parent = parents[j]
            if parent < 0:
                positions[j] = root_pos
                chain_rot[j] = root_rot @ local_rot[j]
            else:
                positions[j] = positions[parent] + chain_rot[parent] @ offsets[j]
                chain_rot[j] = chain_rot[parent] @ local_rot[j]
        poses.append(Pose3D(positions))
    return poses


def draw_joint_disk(image: np.ndarray, center_px, radius: int = JOINT_RADIUS, color=JOINT_COLOR) -> None:
    """Draw one joint disk at a subpixel center (in place)."""
    scale = 1 << _SHIFT
    c = (int(round(center_px[0] * scale)), int(round(center_px[1] * scale)))
    cv2.circle(image, c, radius * scale, color, thickness=-1, lineType=cv2.LINE_AA, shift=_SHIFT)


def render_frame(pose: Pose3D, camera: CameraIntrinsics, skeleton: Skeleton) -> np.ndarray:
    """Render one stick-figure frame: bones first, joint disks on top."""
    image = np.full((camera.height, camera.width, 3), BACKGROUND_COLOR, dtype=np.uint8)
    pts = project(camera, pose.joints_mm)
    scale = 1 << _SHIFT
    fixed = np.round(pts * scale).astype(np.int64)
    for a, b in skeleton.edges:
        cv2.line(
            image, tuple(fixed[a]), tuple(fixed[b]), BONE_COLOR,
            thickness=BONE_THICKNESS, lineType=cv2.LINE_AA, shift=_SHIFT,
        )
    for j in range(pose.num_joints):
        draw_joint_disk(image, pts[j])
    return image


def _frame_bbox(points_px: np.ndarray, image_size: int) -> BoundingBox:
    lo = points_px.min(axis=0)
    hi = points_px.max(axis=0)
    pad = 0.06 * float(max(hi[0] - lo[0], hi[1] - lo[1])) + JOINT_RADIUS + 3
    x0 = max(0.0, float(lo[0]) - pad)
    y0 = max(0.0, float(lo[1]) - pad)
    x1 = min(float(image_size), float(hi[0]) + pad)
    y1 = min(float(image_size), float(hi[1]) + pad)
    return BoundingBox(x=x0, y=y0, w=x1 - x0, h=y1 - y0)


def generate_synthetic_dataset(config: SyntheticConfig, out_dir) -> SequenceManifest:
    """Write manifest + rendered PNGs under ``out_dir``; return the manifest.

    Deterministic for a fixed seed (byte-identical output trees). Raises
    when the figure would leave the image instead of clipping silently.
    """
    out_dir = Path(out_dir)
    skeleton = config.figure()[0]
    size = config.image_size
    half = size / 2.0
    camera = CameraIntrinsics(
        fx=config.focal_px, fy=config.focal_px, cx=half, cy=half, width=size, height=size
    )
    poses = sample_pose_sequence(config)

    margin = JOINT_RADIUS + BONE_THICKNESS + 2
    records = []
    images_dir = out_dir / "images"
    third = -(-config.num_frames // len(_ACTIONS))  # ceil division
    for i, pose in enumerate(poses):
        pts = project(camera, pose.joints_mm)
        if pts.min() < margin or pts.max() > size - margin:
            raise ValidationError(
                f"frame {i}: projected figure exceeds the {size}px image; "
                f"increase image_size or reduce motion"
            )
        image = render_frame(pose, camera, skeleton)
        rel_path = f"images/{i:06d}.png"
        write_image(images_dir / f"{i:06d}.png", image)
        records.append(
            FrameRecord(
                frame_id=i,
                subject=config.subject,
                action=_ACTIONS[min(i // third, len(_ACTIONS) - 1)],
                camera=camera,
                bbox=_frame_bbox(pts, size),
                pose_gt=pose,
                image_path=rel_path,
            )
        )

    manifest = SequenceManifest(skeleton=skeleton, frames=tuple(records), fps=config.fps, base_dir=out_dir)
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
