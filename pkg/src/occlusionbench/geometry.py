"""Pinhole camera math.

Projection, back-projection and the virtual-camera crop transform that
re-points the camera at a person's bounding box so the crop has correct
perspective with the principal point at its center. The crop mapping is
a pure homography ``K_dst @ R @ K_src^-1`` between original pixels and
crop pixels, because the virtual camera shares the optical center of the
original one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import cv2
import numpy as np

from .errors import GeometryError, ValidationError

_W_EPS = 1e-12  # homogeneous scale below this counts as the plane at infinity


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels; image size included for bounds checks."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (self.width > 0 and self.height > 0):
            raise ValidationError(f"image size must be positive, got {self.width}x{self.height}")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]], dtype=np.float64
        )

    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            width=int(d["width"]), height=int(d["height"]),
        )


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates (x, y = top-left corner)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"bounding box must have positive size, got w={self.w}, h={self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


def project(camera: CameraIntrinsics, points_mm) -> np.ndarray:
    """Project camera-space points (mm) to pixel coordinates.

    Accepts a single (3,) point or an (..., 3) array; depth must be positive.
    """
    p = np.asarray(points_mm, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise GeometryError("cannot project points with non-positive depth")
    u = camera.fx * p[..., 0] / z + camera.cx
    v = camera.fy * p[..., 1] / z + camera.cy
    return np.stack([u, v], axis=-1)


def backproject(camera: CameraIntrinsics, pixels, depth_mm) -> np.ndarray:
    """Lift pixel coordinates to camera space at the given depth (mm)."""
    px = np.asarray(pixels, dtype=np.float64)
    z = np.asarray(depth_mm, dtype=np.float64)
    if np.any(z <= 0):
        raise GeometryError("cannot backproject to non-positive depth")
    x = (px[..., 0] - camera.cx) * z / camera.fx
    y = (px[..., 1] - camera.cy) * z / camera.fy
    return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)


@dataclass(frozen=True)
class CropTransform:
    """Mapping between original-image pixels and virtual-camera crop pixels.

    ``rotation`` takes original-camera coordinates to virtual-camera
    coordinates. ``mirror_x`` composes a horizontal flip of the crop into
    the homography (used for flip-consistent decoding); the underlying
    rotation stays a proper rotation either way.
    """

    rotation: np.ndarray
    k_src: CameraIntrinsics
    k_dst: CameraIntrinsics
    crop_size: int
    mirror_x: bool = False

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        object.__setattr__(self, "rotation", rot)
        if rot.shape != (3, 3):
            raise ValidationError(f"rotation must be 3x3, got {rot.shape}")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-9):
            raise ValidationError("rotation matrix is not orthonormal")
        if self.crop_size <= 0:
            raise ValidationError("crop_size must be positive")
        half = self.crop_size / 2.0
        if not (self.k_dst.cx == half and self.k_dst.cy == half):
            raise ValidationError("virtual principal point must sit exactly at the crop center")
        h = self.k_dst.matrix() @ rot @ self.k_src.inverse_matrix()
        if self.mirror_x:
            flip = np.array([[-1.0, 0.0, float(self.crop_size)], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
            h = flip @ h
        h_inv = np.linalg.inv(h)
        for m in (h, h_inv):
            m.flags.writeable = False
        object.__setattr__(self, "_homography", h)
        object.__setattr__(self, "_homography_inv", h_inv)

    @property
    def homography(self) -> np.ndarray:
        """3x3 matrix mapping original pixels to crop pixels (projectively)."""
        return self._homography

    @property
    def inverse_homography(self) -> np.ndarray:
        return self._homography_inv

    def mirrored(self) -> "CropTransform":
        return replace(self, mirror_x=not self.mirror_x)

    def to_json(self) -> str:
        return json.dumps(
            {
                "rotation": self.rotation.tolist(),
                "k_src": self.k_src.to_dict(),
                "k_dst": self.k_dst.to_dict(),
                "crop_size": self.crop_size,
                "mirror_x": self.mirror_x,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "CropTransform":
        d = json.loads(text)
        return cls(
            rotation=np.array(d["rotation"], dtype=np.float64),
            k_src=CameraIntrinsics.from_dict(d["k_src"]),
            k_dst=CameraIntrinsics.from_dict(d["k_dst"]),
            crop_size=int(d["crop_size"]),
            mirror_x=bool(d.get("mirror_x", False)),
        )


def make_crop_transform(
    camera: CameraIntrinsics,
    bbox: BoundingBox,
    crop_size: int = 256,
    coverage: float = 0.8,
) -> CropTransform:
    """Build the virtual camera looking at the bounding-box center.

    The virtual optical axis passes through the back-projected bbox
    center, the principal point sits at the crop center and the focal
    length is chosen so the larger bbox side spans ``coverage`` of the
    crop side length. Roll is fixed by keeping the original image x-axis
    as horizontal as possible (its projection onto the new image plane).
    """
    if crop_size <= 0:
        raise ValidationError("crop_size must be positive")
    if not (0 < coverage <= 1):
        raise ValidationError("coverage must be in (0, 1]")
    u0, v0 = bbox.center
    direction = camera.inverse_matrix() @ np.array([u0, v0, 1.0])
    new_z = direction / np.linalg.norm(direction)
    x_axis = np.array([1.0, 0.0, 0.0])
    new_x = x_axis - np.dot(x_axis, new_z) * new_z
    new_x = new_x / np.linalg.norm(new_x)
    new_y = np.cross(new_z, new_x)
    rotation = np.stack([new_x, new_y, new_z], axis=0)

    scale = coverage * crop_size / max(bbox.w, bbox.h)
    half = crop_size / 2.0
    k_dst = CameraIntrinsics(
        fx=camera.fx * scale, fy=camera.fy * scale, cx=half, cy=half,
        width=crop_size, height=crop_size,
    )
    return CropTransform(rotation=rotation, k_src=camera, k_dst=k_dst, crop_size=crop_size)


def _apply_homography(h: np.ndarray, points) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p2 = np.atleast_2d(p)
    ones = np.ones((p2.shape[0], 1))
    hom = np.concatenate([p2, ones], axis=1) @ h.T
    w = hom[:, 2]
    if np.any(np.abs(w) < _W_EPS):
        raise GeometryError("point maps through the plane at infinity")
    out = hom[:, :2] / w[:, None]
    return out[0] if single else out


def warp_point(transform: CropTransform, points) -> np.ndarray:
    """Map original-image pixel coordinates to crop pixel coordinates."""
    return _apply_homography(transform.homography, points)


def inverse_warp_point(transform: CropTransform, points) -> np.ndarray:
    """Map crop pixel coordinates back to original-image pixels."""
    return _apply_homography(transform.inverse_homography, points)


def warp_bbox(transform: CropTransform, bbox: BoundingBox, clip: bool = True) -> BoundingBox:
    """Axis-aligned hull of the warped box (corners and side midpoints).

    With ``clip`` the result is intersected with the crop frame, which is
    where occluders are generated and degrees of occlusion measured.
    """
    x0, y0, w, h = bbox.x, bbox.y, bbox.w, bbox.h
    pts = np.array(
        [
            [x0, y0], [x0 + w, y0], [x0, y0 + h], [x0 + w, y0 + h],
            [x0 + w / 2, y0], [x0 + w / 2, y0 + h], [x0, y0 + h / 2], [x0 + w, y0 + h / 2],
        ]
    )
    warped = warp_point(transform, pts)
    lo = warped.min(axis=0)
    hi = warped.max(axis=0)
    if clip:
        lo = np.clip(lo, 0.0, transform.crop_size)
        hi = np.clip(hi, 0.0, transform.crop_size)
    if not (hi[0] > lo[0] and hi[1] > lo[1]):
        raise GeometryError("warped bounding box does not intersect the crop")
    return BoundingBox(x=lo[0], y=lo[1], w=hi[0] - lo[0], h=hi[1] - lo[1])


def warp_image(transform: CropTransform, image: np.ndarray, interpolation: str = "bilinear") -> np.ndarray:
    """Resample the original image into the crop frame.

    Each output pixel is sampled at its inverse-warped source position;
    samples outside the source image come out black.
    """
    expected = (transform.k_src.height, transform.k_src.width)
    if image.shape[:2] != expected:
        raise ValidationError(
            f"image shape {image.shape[:2]} does not match camera size {expected}"
        )
    flags = {"bilinear": cv2.INTER_LINEAR, "nearest": cv2.INTER_NEAREST}.get(interpolation)
    if flags is None:
        raise ValidationError(f"unknown interpolation {interpolation!r}")
    size = (transform.crop_size, transform.crop_size)
    return cv2.warpPerspective(
        image, transform.homography, size, flags=flags,
        borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )


def save_crop_transform(transform: CropTransform, path) -> None:
    Path(path).write_text(transform.to_json())


def load_crop_transform(path) -> CropTransform:
    return CropTransform.from_json(Path(path).read_text())
