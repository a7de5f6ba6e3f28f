"""Training-time image augmentations that keep 2D joint labels consistent.

One affine map (rotation, scale, translation about the crop center) is
applied identically to pixels and joint coordinates; horizontal flips
mirror the x-axis and swap left/right joint indices. Photometric jitter
(brightness, contrast, hue, blur) never touches coordinates. Parameter
draws happen in a fixed order even when a range is degenerate, so
seeded streams stay aligned across configurations.

When composing a full training pipeline the intended order is geometric
augmentation, then occluder compositing, then photometric augmentation,
so pasted occluders get color-distorted and blurred like the rest of the
scene.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import cv2
import numpy as np

from .datamodel import Skeleton
from .errors import ValidationError


@dataclass(frozen=True)
class AugmentParams:
    rotation_deg: tuple[float, float] = (-15.0, 15.0)
    scale: tuple[float, float] = (0.85, 1.15)
    translation_px: tuple[float, float] = (-8.0, 8.0)
    flip_prob: float = 0.5
    brightness: tuple[float, float] = (0.85, 1.15)  # multiplicative
    contrast: tuple[float, float] = (0.85, 1.15)  # about mid-gray 128
    hue_deg: tuple[float, float] = (-10.0, 10.0)
    blur_sigma: tuple[float, float] = (0.0, 1.5)
    seed: int | None = None

    def __post_init__(self):
        for name in ("rotation_deg", "scale", "translation_px", "brightness", "contrast", "hue_deg", "blur_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValidationError(f"{name} range is not ordered: ({lo}, {hi})")
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ValidationError("flip_prob must be in [0, 1]")
        if self.scale[0] <= 0:
            raise ValidationError("scale must stay positive")
        if self.blur_sigma[0] < 0:
            raise ValidationError("blur_sigma must be non-negative")

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls(
            rotation_deg=(0.0, 0.0), scale=(1.0, 1.0), translation_px=(0.0, 0.0), flip_prob=0.0,
            brightness=(1.0, 1.0), contrast=(1.0, 1.0), hue_deg=(0.0, 0.0), blur_sigma=(0.0, 0.0),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "AugmentParams":
        d = json.loads(text)
        kwargs = {}
        for key, value in d.items():
            kwargs[key] = tuple(value) if isinstance(value, list) else value
        return cls(**kwargs)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentParams":
        return cls.from_json(json.dumps(d))


def _rng_for(params: AugmentParams, rng):
    if rng is not None:
        return rng
    return np.random.default_rng(params.seed)


def geometric_augment(
    image: np.ndarray,
    joints_2d: np.ndarray,
    skeleton: Skeleton,
    params: AugmentParams,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Random flip plus one affine map, applied to pixels and joints alike.

    Returns the augmented image and the transformed (J, 2) joints. The
    flip happens first (mirroring columns and swapping the skeleton's
    left/right pairs), then rotation/scale/translation about the center.
    """
    rng = _rng_for(params, rng)
    joints = np.asarray(joints_2d, dtype=np.float64).copy()
    h, w = image.shape[:2]

    theta = np.deg2rad(rng.uniform(*params.rotation_deg))
    s = rng.uniform(*params.scale)
    tx = rng.uniform(*params.translation_px)
    ty = rng.uniform(*params.translation_px)
    flip_coin = rng.random()

    if params.flip_prob > 0 and not skeleton.left_right_pairs:
        raise ValidationError("flip requested but the skeleton declares no left/right pairs")
    if flip_coin < params.flip_prob:
        image = image[:, ::-1].copy()
        joints[:, 0] = (w - 1) - joints[:, 0]
        for left, right in skeleton.left_right_pairs:
            joints[[left, right]] = joints[[right, left]]

    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    linear = s * np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    offset = center - linear @ center + np.array([tx, ty])
    matrix = np.concatenate([linear, offset[:, None]], axis=1)

    warped = cv2.warpAffine(
        image, matrix, (w, h), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )
    new_joints = joints @ linear.T + offset
    return warped, new_joints


def photometric_augment(
    image: np.ndarray,
    params: AugmentParams,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Brightness/contrast/hue jitter followed by an optional Gaussian blur.

    Output stays 8-bit RGB in [0, 255]; each stage is skipped entirely
    when its drawn parameter is the identity, so identity ranges return
    the input bytes unchanged.
    """
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError("photometric_augment expects an (H, W, 3) uint8 image")
    rng = _rng_for(params, rng)
    b = rng.uniform(*params.brightness)
    c = rng.uniform(*params.contrast)
    hue = rng.uniform(*params.hue_deg)
    sigma = rng.uniform(*params.blur_sigma)

    out = image
    if b != 1.0 or c != 1.0:
        values = out.astype(np.float64)
        if b != 1.0:
            values = values * b
        if c != 1.0:
            values = (values - 128.0) * c + 128.0
        out = np.clip(np.rint(values), 0, 255).astype(np.uint8)
    if hue != 0.0:
        hsv = cv2.cvtColor(out, cv2.COLOR_RGB2HSV)
        # OpenCV hue wraps at 180 (2 degrees per unit)
        shift = int(round(hue / 2.0))
        hsv[:, :, 0] = (hsv[:, :, 0].astype(np.int32) + shift) % 180
        out = cv2.cvtColor(hsv.astype(np.uint8), cv2.COLOR_HSV2RGB)
    if sigma > 1e-9:
        ksize = 2 * int(np.ceil(3.0 * sigma)) + 1
        out = cv2.GaussianBlur(out, (ksize, ksize), sigmaX=sigma, sigmaY=sigma)
    return out


def save_params(params: AugmentParams, path) -> None:
    Path(path).write_text(params.to_json())


def load_params(path) -> AugmentParams:
    return AugmentParams.from_json(Path(path).read_text())
