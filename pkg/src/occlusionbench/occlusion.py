"""Synthetic occluder generation, calibrated to a target degree of occlusion.

Five occluder families (circles, a single random-erasing rectangle,
multiple rectangles, oriented bars, pasted object segments) plus a
mixture strategy that picks one family at random per call. The degree of
occlusion is the fraction of pixels covered inside the person's bounding
box; generated sets are calibrated to the requested degree by bisecting
a global size scale, so the distribution of occluded pixel counts is
comparable across families.

All shapes are rasterized without anti-aliasing into 8-bit alpha bitmaps
anchored in crop coordinates. A pixel counts as occluded when the
combined alpha reaches 128, the same threshold the solid-black
compositing uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import cv2
import json
import numpy as np

from .errors import CalibrationError, ValidationError
from .geometry import BoundingBox

KINDS = ("circles", "single_rectangle", "rectangles", "bars", "objects", "mixture", "none")
MIXTURE_POOL = ("circles", "single_rectangle", "rectangles", "bars", "objects")
GEOMETRIC_KINDS = ("circles", "single_rectangle", "rectangles", "bars")

ALPHA_THRESHOLD = 128
MAX_TARGET_DEGREE = 0.7

_SHIFT = 4  # fixed-point bits for subpixel shape coordinates


@dataclass(frozen=True)
class OcclusionSpec:
    """What to generate: occluder family, target degree and RNG seed."""

    kind: str
    target_degree: float
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown occlusion kind {self.kind!r}, expected one of {KINDS}")
        if not (0.0 <= self.target_degree <= MAX_TARGET_DEGREE):
            raise ValidationError(
                f"target_degree must be in [0, {MAX_TARGET_DEGREE}], got {self.target_degree}"
            )


@dataclass(frozen=True)
class DegreeMeasurement:
    """Measured occlusion: union pixel count inside the bounding box."""

    occluded_fraction: float
    occluded_pixel_count: int
    bbox_pixel_count: int

    def __post_init__(self):
        if self.bbox_pixel_count <= 0:
            raise ValidationError("bbox_pixel_count must be positive")
        exact = self.occluded_pixel_count / self.bbox_pixel_count
        if self.occluded_fraction != exact:
            raise ValidationError("occluded_fraction must equal count / bbox_pixel_count exactly")


@dataclass(frozen=True)
class OccluderMask:
    """One rasterized occluder: alpha bitmap plus its top-left crop anchor.

    Anchors may be negative; only the part overlapping the image matters.
    ``source_id`` names the object-library entry for texture fills, and
    ``src_factor``/``src_center`` record the paste geometry so compositing
    can warp the entry's RGB exactly like its alpha.
    """

    alpha: np.ndarray
    x: int
    y: int
    source_id: str | None = None
    src_factor: float | None = None
    src_center: tuple[float, float] | None = None

    def __post_init__(self):
        alpha = np.ascontiguousarray(self.alpha, dtype=np.uint8)
        if alpha.ndim != 2 or alpha.size == 0:
            raise ValidationError("mask alpha must be a non-empty 2D bitmap")
        alpha.flags.writeable = False
        object.__setattr__(self, "alpha", alpha)

    @property
    def height(self) -> int:
        return self.alpha.shape[0]

    @property
    def width(self) -> int:
        return self.alpha.shape[1]


@dataclass(frozen=True)
class OccluderMaskSet:
    """Occluders anchored to one image, with the fill style to composite."""

    masks: tuple[OccluderMask, ...]
    fill: str  # "black" | "object"
    image_size: tuple[int, int]  # (width, height)
    measured: DegreeMeasurement | None = None

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        if self.fill not in ("black", "object"):
            raise ValidationError(f"fill must be 'black' or 'object', got {self.fill!r}")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValidationError("image_size must be positive")
        for i, m in enumerate(self.masks):
            if m.x >= w or m.y >= h or m.x + m.width <= 0 or m.y + m.height <= 0:
                raise ValidationError(f"mask {i} does not intersect the {w}x{h} image")
            if self.fill == "object" and m.source_id is None:
                raise ValidationError(f"mask {i} has object fill but no source_id")

    @property
    def source_ids(self) -> tuple[str, ...]:
        return tuple(m.source_id for m in self.masks if m.source_id is not None)

    def __len__(self) -> int:
        return len(self.masks)


@dataclass(frozen=True)
class ObjectEntry:
    id: str
    rgba: np.ndarray  # (H, W, 4) uint8, alpha channel is the segmentation mask
    split: str  # "train" | "test"

    def __post_init__(self):
        rgba = np.ascontiguousarray(self.rgba, dtype=np.uint8)
        if rgba.ndim != 3 or rgba.shape[2] != 4:
            raise ValidationError(f"object entry {self.id!r} must be RGBA, got shape {rgba.shape}")
        if not np.any(rgba[:, :, 3] >= ALPHA_THRESHOLD):
            raise ValidationError(f"object entry {self.id!r} has empty alpha support")
        if self.split not in ("train", "test"):
            raise ValidationError(f"object entry {self.id!r}: split must be 'train' or 'test'")
        rgba.flags.writeable = False
        object.__setattr__(self, "rgba", rgba)


@dataclass(frozen=True)
class ObjectLibrary:
    """Immutable collection of segmented occluder objects with a train/test split."""

    entries: tuple[ObjectEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError("object library ids must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def subset(self, split: str) -> "ObjectLibrary":
        return ObjectLibrary(entries=tuple(e for e in self.entries if e.split == split))

    def get(self, entry_id: str) -> ObjectEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise ValidationError(f"object library has no entry {entry_id!r}")


@dataclass(frozen=True)
class AugmentationPolicy:
    """Occlusion augmentation applied with a per-frame probability."""

    spec: OcclusionSpec
    apply_probability: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.apply_probability <= 1.0):
            raise ValidationError("apply_probability must be in [0, 1]")


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape-sampling parameter ranges; none of these are prescribed by the
    degree definition, so they are all configurable."""

    circle_count: tuple[int, int] = (1, 8)
    circle_radius_frac: tuple[float, float] = (0.05, 0.25)  # of sqrt(bbox area)
    rect_count: tuple[int, int] = (1, 8)
    rect_side_frac: tuple[float, float] = (0.10, 0.55)  # of the matching bbox side
    single_rect_area_frac: tuple[float, float] = (0.02, 0.4)  # of the image, RE-0
    single_rect_aspect: tuple[float, float] = (0.3, 1.0 / 0.3)
    bar_count: tuple[int, int] = (1, 6)
    bar_width_frac: tuple[float, float] = (0.02, 0.08)  # of the bbox diagonal
    bar_length_frac: tuple[float, float] = (0.6, 1.5)  # of the bbox diagonal
    object_count: tuple[int, int] = (1, 4)
    object_side_frac: tuple[float, float] = (0.3, 0.8)  # of sqrt(bbox area)


def _bbox_rect(bbox: BoundingBox, image_size: tuple[int, int]) -> tuple[int, int, int, int]:
    w, h = image_size
    x0 = max(0, int(round(bbox.x)))
    y0 = max(0, int(round(bbox.y)))
    x1 = min(w, int(round(bbox.x + bbox.w)))
    y1 = min(h, int(round(bbox.y + bbox.h)))
    if x1 <= x0 or y1 <= y0:
        raise ValidationError("bounding box does not cover any pixel inside the image")
    return x0, y0, x1, y1


def _union_over_rect(masks, rect) -> np.ndarray:
    x0, y0, x1, y1 = rect
    union = np.zeros((y1 - y0, x1 - x0), dtype=bool)
    for m in masks:
        ix0 = max(m.x, x0)
        iy0 = max(m.y, y0)
        ix1 = min(m.x + m.width, x1)
        iy1 = min(m.y + m.height, y1)
        if ix1 <= ix0 or iy1 <= iy0:
            continue
        patch = m.alpha[iy0 - m.y : iy1 - m.y, ix0 - m.x : ix1 - m.x]
        union[iy0 - y0 : iy1 - y0, ix0 - x0 : ix1 - x0] |= patch >= ALPHA_THRESHOLD
    return union


def measure_degree(masks: OccluderMaskSet, bbox_crop: BoundingBox) -> DegreeMeasurement:
    """Union pixel count of all masks inside the box (overlaps counted once)."""
    rect = _bbox_rect(bbox_crop, masks.image_size)
    union = _union_over_rect(masks.masks, rect)
    count = int(union.sum())
    total = union.size
    return DegreeMeasurement(
        occluded_fraction=count / total, occluded_pixel_count=count, bbox_pixel_count=total
    )


def _fraction(raw_masks, rect) -> float:
    union = _union_over_rect(raw_masks, rect)
    return float(union.sum()) / union.size


def _clip_window(x0f, y0f, x1f, y1f, image_size):
    w, h = image_size
    x0 = max(0, int(np.floor(x0f)) - 1)
    y0 = max(0, int(np.floor(y0f)) - 1)
    x1 = min(w, int(np.ceil(x1f)) + 1)
    y1 = min(h, int(np.ceil(y1f)) + 1)
    if x1 <= x0 or y1 <= y0:
        return None
    return x0, y0, x1, y1


def _fixed(value: float) -> int:
    return int(round(value * (1 << _SHIFT)))


def _raster_circles(shapes, scale, image_size):
    masks = []
    for cx, cy, r0 in shapes:
        r = max(0.5, r0 * scale)
        win = _clip_window(cx - r, cy - r, cx + r, cy + r, image_size)
        if win is None:
            continue
        x0, y0, x1, y1 = win
        bm = np.zeros((y1 - y0, x1 - x0), dtype=np.uint8)
        cv2.circle(bm, (_fixed(cx - x0), _fixed(cy - y0)), _fixed(r), 255, -1, cv2.LINE_8, _SHIFT)
        masks.append(OccluderMask(alpha=bm, x=x0, y=y0))
    return masks


def _raster_rects(shapes, scale, image_size):
    masks = []
    for cx, cy, w0, h0 in shapes:
        w = max(1.0, w0 * scale)
        h = max(1.0, h0 * scale)
        win = _clip_window(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, image_size)
        if win is None:
            continue
        x0, y0, x1, y1 = win
        bm = np.zeros((y1 - y0, x1 - x0), dtype=np.uint8)
        cv2.rectangle(
            bm,
            (_fixed(cx - w / 2 - x0), _fixed(cy - h / 2 - y0)),
            (_fixed(cx + w / 2 - x0), _fixed(cy + h / 2 - y0)),
            255, -1, cv2.LINE_8, _SHIFT,
        )
        masks.append(OccluderMask(alpha=bm, x=x0, y=y0))
    return masks


def _raster_bars(shapes, scale, image_size):
    # both dimensions scale so the aspect ratio (thin-ness) is preserved
    # and coverage keeps growing until any target degree is reachable
    masks = []
    for cx, cy, theta, length0, w0 in shapes:
        length = max(1.0, length0 * scale)
        width = max(0.5, w0 * scale)
        u = np.array([np.cos(theta), np.sin(theta)])
        v = np.array([-np.sin(theta), np.cos(theta)])
        c = np.array([cx, cy])
        corners = np.stack(
            [
                c + u * length / 2 + v * width / 2,
                c + u * length / 2 - v * width / 2,
                c - u * length / 2 - v * width / 2,
                c - u * length / 2 + v * width / 2,
            ]
        )
        win = _clip_window(
            corners[:, 0].min(), corners[:, 1].min(), corners[:, 0].max(), corners[:, 1].max(), image_size
        )
        if win is None:
            continue
        x0, y0, x1, y1 = win
        bm = np.zeros((y1 - y0, x1 - x0), dtype=np.uint8)
        pts = np.round((corners - [x0, y0]) * (1 << _SHIFT)).astype(np.int32)
        cv2.fillPoly(bm, [pts], 255, cv2.LINE_8, _SHIFT)
        masks.append(OccluderMask(alpha=bm, x=x0, y=y0))
    return masks


def _object_affine(factor: float, cx: float, cy: float, w_src: int, h_src: int, x0: int, y0: int) -> np.ndarray:
    """Source-object pixels -> window pixels: scale about the object center,
    paste centered on (cx, cy)."""
    return np.array(
        [
            [factor, 0.0, cx - factor * w_src / 2.0 - x0],
            [0.0, factor, cy - factor * h_src / 2.0 - y0],
        ]
    )


def _raster_objects(shapes, scale, image_size, library):
    masks = []
    for cx, cy, entry_id, base_side in shapes:
        entry = library.get(entry_id)
        h_src, w_src = entry.rgba.shape[:2]
        factor = max(base_side * scale / max(h_src, w_src), 1e-6)
        half_w = factor * w_src / 2.0
        half_h = factor * h_src / 2.0
        win = _clip_window(cx - half_w, cy - half_h, cx + half_w, cy + half_h, image_size)
        if win is None:
            continue
        x0, y0, x1, y1 = win
        mat = _object_affine(factor, cx, cy, w_src, h_src, x0, y0)
        alpha = cv2.warpAffine(
            entry.rgba[:, :, 3], mat, (x1 - x0, y1 - y0),
            flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
        )
        masks.append(
            OccluderMask(
                alpha=alpha, x=x0, y=y0, source_id=entry_id,
                src_factor=factor, src_center=(float(cx), float(cy)),
            )
        )
    return masks


def _sample_shapes(kind: str, bbox: BoundingBox, image_size, rng, cfg: GeneratorConfig, library):
    """Draw the random base shapes of one family; size scaling happens later."""
    bx0, by0, bw, bh = bbox.x, bbox.y, bbox.w, bbox.h
    area_side = float(np.sqrt(bw * bh))
    diag = float(np.hypot(bw, bh))

    def centers(n):
        return np.stack(
            [rng.uniform(bx0, bx0 + bw, size=n), rng.uniform(by0, by0 + bh, size=n)], axis=1
        )

    if kind == "circles":
        n = int(rng.integers(cfg.circle_count[0], cfg.circle_count[1] + 1))
        cs = centers(n)
        radii = rng.uniform(*cfg.circle_radius_frac, size=n) * area_side
        return [(cs[i, 0], cs[i, 1], radii[i]) for i in range(n)], _raster_circles

    if kind == "rectangles":
        n = int(rng.integers(cfg.rect_count[0], cfg.rect_count[1] + 1))
        cs = centers(n)
        ws = rng.uniform(*cfg.rect_side_frac, size=n) * bw
        hs = rng.uniform(*cfg.rect_side_frac, size=n) * bh
        return [(cs[i, 0], cs[i, 1], ws[i], hs[i]) for i in range(n)], _raster_rects

    if kind == "single_rectangle":
        # RE-0 random erasing: area and aspect ratio drawn uniformly, the
        # rectangle re-positioned until it fits inside the image.
        img_w, img_h = image_size
        for _ in range(200):
            s = rng.uniform(*cfg.single_rect_area_frac) * img_w * img_h
            r = rng.uniform(*cfg.single_rect_aspect)
            w0 = int(np.sqrt(s / r))
            h0 = int(np.sqrt(s * r))
            left = int(rng.integers(0, img_w))
            top = int(rng.integers(0, img_h))
            if w0 >= 1 and h0 >= 1 and left + w0 <= img_w and top + h0 <= img_h:
                return [(left + w0 / 2, top + h0 / 2, float(w0), float(h0))], _raster_rects
        raise CalibrationError("could not place the single erasing rectangle inside the image")

    if kind == "bars":
        n = int(rng.integers(cfg.bar_count[0], cfg.bar_count[1] + 1))
        cs = centers(n)
        thetas = rng.uniform(0.0, np.pi, size=n)
        lengths = rng.uniform(*cfg.bar_length_frac, size=n) * diag
        widths = rng.uniform(*cfg.bar_width_frac, size=n) * diag
        return [(cs[i, 0], cs[i, 1], thetas[i], lengths[i], widths[i]) for i in range(n)], _raster_bars

    if kind == "objects":
        n = int(rng.integers(cfg.object_count[0], cfg.object_count[1] + 1))
        cs = centers(n)
        idx = rng.integers(0, len(library.entries), size=n)
        sides = rng.uniform(*cfg.object_side_frac, size=n) * area_side
        shapes = [(cs[i, 0], cs[i, 1], library.entries[idx[i]].id, sides[i]) for i in range(n)]
        return shapes, lambda sh, sc, im: _raster_objects(sh, sc, im, library)

    raise ValidationError(f"cannot sample shapes for kind {kind!r}")


def _calibrate(raster_fn, shapes, rect, image_size, target, tolerance=0.02, inner_tol=0.004):
    """Bisect a global size scale until the union coverage hits the target.

    Coverage is monotone in the scale (every shape grows about its own
    center), so bisection converges; pixel granularity limits how close
    one can get, hence the 'best seen' fallback within ``tolerance``.
    """

    def evaluate(scale):
        masks = raster_fn(shapes, scale, image_size)
        return _fraction(masks, rect), masks

    scale = 1.0
    frac, masks = evaluate(scale)
    best = (abs(frac - target), masks)
    if abs(frac - target) <= inner_tol:
        return masks

    if frac < target:
        lo = scale
        hi = None
        for _ in range(24):
            scale *= 2.0
            frac, masks = evaluate(scale)
            if abs(frac - target) < best[0]:
                best = (abs(frac - target), masks)
            if frac >= target:
                hi = scale
                break
            lo = scale
        if hi is None:
            raise CalibrationError(
                f"occluder coverage saturates at {frac:.3f}, below the target {target:.3f}"
            )
    else:
        hi = scale
        lo = None
        for _ in range(60):
            scale *= 0.5
            frac, masks = evaluate(scale)
            if abs(frac - target) < best[0]:
                best = (abs(frac - target), masks)
            if frac <= target:
                lo = scale
                break
            hi = scale
        if lo is None:
            raise CalibrationError(f"occluder coverage stuck at {frac:.3f}, above the target {target:.3f}")

    for _ in range(36):
        mid = np.sqrt(lo * hi)
        frac, masks = evaluate(mid)
        if abs(frac - target) < best[0]:
            best = (abs(frac - target), masks)
        if abs(frac - target) <= inner_tol:
            return masks
        if frac < target:
            lo = mid
        else:
            hi = mid

    if best[0] <= tolerance:
        return best[1]
    raise CalibrationError(
        f"calibration missed the target degree {target:.3f} by {best[0]:.3f} after bisection"
    )


def generate(
    spec: OcclusionSpec,
    bbox_crop: BoundingBox,
    library: ObjectLibrary | None = None,
    rng: np.random.Generator | None = None,
    image_size: tuple[int, int] | None = None,
    config: GeneratorConfig | None = None,
) -> OccluderMaskSet:
    """Generate occluders over the crop-space bounding box.

    The returned set's measured degree is within +-0.02 (absolute) of
    ``spec.target_degree``. Deterministic given ``spec.seed`` (or a
    caller-supplied ``rng`` stream). A library is required for the
    ``objects`` and ``mixture`` kinds.
    """
    if image_size is None:
        image_size = (int(np.ceil(bbox_crop.x + bbox_crop.w)), int(np.ceil(bbox_crop.y + bbox_crop.h)))
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    cfg = config or GeneratorConfig()

    if spec.kind in ("objects", "mixture") and (library is None or len(library) == 0):
        raise ValidationError(f"occlusion kind {spec.kind!r} requires a non-empty object library")
    if spec.kind == "none":
        if spec.target_degree > 0:
            raise ValidationError("kind 'none' cannot meet a positive target degree")
        return OccluderMaskSet(masks=(), fill="black", image_size=image_size)
    if spec.target_degree == 0:
        return OccluderMaskSet(masks=(), fill="black", image_size=image_size)

    kind = spec.kind
    if kind == "mixture":
        kind = MIXTURE_POOL[int(rng.integers(0, len(MIXTURE_POOL)))]

    rect = _bbox_rect(bbox_crop, image_size)
    shapes, raster_fn = _sample_shapes(kind, bbox_crop, image_size, rng, cfg, library)
    masks = _calibrate(raster_fn, shapes, rect, image_size, spec.target_degree)
    fill = "object" if kind == "objects" else "black"
    mask_set = OccluderMaskSet(masks=tuple(masks), fill=fill, image_size=image_size)
    measured = measure_degree(mask_set, bbox_crop)
    return OccluderMaskSet(masks=tuple(masks), fill=fill, image_size=image_size, measured=measured)


def composite(
    image: np.ndarray,
    masks: OccluderMaskSet,
    library: ObjectLibrary | None = None,
) -> np.ndarray:
    """Paint the occluders onto a copy of the image.

    Solid-black fill zeroes every covered pixel; object fill alpha-blends
    the library entry's RGB (resized exactly like its alpha) over the
    image. Pixels outside all masks are untouched.
    """
    h, w = image.shape[:2]
    if (w, h) != tuple(masks.image_size):
        raise ValidationError(
            f"image size {(w, h)} does not match mask set anchor frame {masks.image_size}"
        )
    out = image.copy()
    if len(masks) == 0:
        return out

    if masks.fill == "black":
        union = _union_over_rect(masks.masks, (0, 0, w, h))
        out[union] = 0
        return out

    if library is None:
        raise ValidationError("object-fill mask sets need the object library to composite")
    for m in masks.masks:
        entry = library.get(m.source_id)
        if m.src_factor is not None and m.src_center is not None:
            h_src, w_src = entry.rgba.shape[:2]
            mat = _object_affine(m.src_factor, m.src_center[0], m.src_center[1], w_src, h_src, m.x, m.y)
            rgb = cv2.warpAffine(
                entry.rgba[:, :, :3], mat, (m.width, m.height),
                flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
            )
        else:
            rgb = cv2.resize(entry.rgba[:, :, :3], (m.width, m.height), interpolation=cv2.INTER_LINEAR)
        ix0, iy0 = max(m.x, 0), max(m.y, 0)
        ix1, iy1 = min(m.x + m.width, w), min(m.y + m.height, h)
        if ix1 <= ix0 or iy1 <= iy0:
            continue
        patch_rgb = rgb[iy0 - m.y : iy1 - m.y, ix0 - m.x : ix1 - m.x]
        patch_a = m.alpha[iy0 - m.y : iy1 - m.y, ix0 - m.x : ix1 - m.x, None].astype(np.float64) / 255.0
        region = out[iy0:iy1, ix0:ix1].astype(np.float64)
        blended = patch_a * patch_rgb.astype(np.float64) + (1.0 - patch_a) * region
        out[iy0:iy1, ix0:ix1] = np.rint(blended).astype(np.uint8)
    return out


def apply_policy(
    policy: AugmentationPolicy,
    image: np.ndarray,
    bbox: BoundingBox,
    library: ObjectLibrary | None = None,
    rng: np.random.Generator | None = None,
    config: GeneratorConfig | None = None,
) -> tuple[np.ndarray, bool, DegreeMeasurement]:
    """Apply the occlusion augmentation with the policy's probability.

    Returns (image, applied, measured degree); the coin flip and the
    generation both consume the given rng stream, so a fixed stream gives
    a fixed outcome.
    """
    if rng is None:
        rng = np.random.default_rng(policy.spec.seed)
    h, w = image.shape[:2]
    if rng.random() >= policy.apply_probability:
        rect = _bbox_rect(bbox, (w, h))
        total = (rect[2] - rect[0]) * (rect[3] - rect[1])
        return image, False, DegreeMeasurement(0.0, 0, total)
    masks = generate(policy.spec, bbox, library=library, rng=rng, image_size=(w, h), config=config)
    occluded = composite(image, masks, library=library)
    return occluded, True, measure_degree(masks, bbox)


@dataclass(frozen=True)
class CalibrationCell:
    kind: str
    degree: float
    mean_pixels: float
    std_pixels: float
    samples: int
    deviation: float = 0.0  # relative deviation from the cross-kind mean
    flagged: bool = False


@dataclass(frozen=True)
class CalibrationReport:
    cells: tuple[CalibrationCell, ...]
    deviation_threshold: float = 0.10

    @property
    def flagged(self) -> tuple[CalibrationCell, ...]:
        return tuple(c for c in self.cells if c.flagged)

    @property
    def max_deviation(self) -> float:
        return max((c.deviation for c in self.cells), default=0.0)


def calibrate_distributions(
    kinds,
    degrees,
    bbox: BoundingBox,
    samples_per_cell: int,
    rng: np.random.Generator | None = None,
    library: ObjectLibrary | None = None,
    image_size: tuple[int, int] | None = None,
    config: GeneratorConfig | None = None,
    deviation_threshold: float = 0.10,
) -> CalibrationReport:
    """Check that occluded-pixel-count distributions match across kinds.

    For each (kind, degree) cell, reports mean and standard deviation of
    the occluded pixel counts over ``samples_per_cell`` independent
    generations, then flags kinds whose mean strays more than the
    threshold from that degree's cross-kind mean.
    """
    kinds = tuple(kinds)
    degrees = tuple(degrees)
    if samples_per_cell < 30:
        raise ValidationError("samples_per_cell must be at least 30 for stable statistics")
    if rng is None:
        rng = np.random.default_rng(0)

    raw: dict[tuple[str, float], tuple[float, float]] = {}
    for kind in kinds:
        for degree in degrees:
            counts = np.empty(samples_per_cell)
            for i in range(samples_per_cell):
                spec = OcclusionSpec(kind=kind, target_degree=degree, seed=int(rng.integers(2**62)))
                masks = generate(
                    spec, bbox, library=library, image_size=image_size, config=config
                )
                if masks.measured is not None:
                    counts[i] = masks.measured.occluded_pixel_count
                else:
                    counts[i] = measure_degree(masks, bbox).occluded_pixel_count
            raw[(kind, degree)] = (float(counts.mean()), float(counts.std()))

    cells = []
    for degree in degrees:
        cross_mean = float(np.mean([raw[(k, degree)][0] for k in kinds]))
        for kind in kinds:
            mean, std = raw[(kind, degree)]
            deviation = abs(mean - cross_mean) / cross_mean if cross_mean > 0 else 0.0
            cells.append(
                CalibrationCell(
                    kind=kind, degree=degree, mean_pixels=mean, std_pixels=std,
                    samples=samples_per_cell, deviation=deviation,
                    flagged=deviation > deviation_threshold,
                )
            )
    cells.sort(key=lambda c: (c.kind, c.degree))
    return CalibrationReport(cells=tuple(cells), deviation_threshold=deviation_threshold)


def load_object_library(directory) -> ObjectLibrary:
    """Load a library from a directory: RGBA PNGs plus manifest.json
    with {"entries": [{"id", "file", "split"}, ...]}."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"object library manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    entries = []
    from PIL import Image

    for row in doc.get("entries", []):
        path = directory / row["file"]
        if not path.exists():
            raise FileNotFoundError(f"object library file missing: {path}")
        with Image.open(path) as im:
            rgba = np.asarray(im.convert("RGBA"), dtype=np.uint8)
        entries.append(ObjectEntry(id=str(row["id"]), rgba=rgba, split=str(row["split"])))
    return ObjectLibrary(entries=tuple(entries))


def save_object_library(library: ObjectLibrary, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    from PIL import Image

    rows = []
    for e in library.entries:
        filename = f"{e.id}.png"
        Image.fromarray(e.rgba, mode="RGBA").save(directory / filename, format="PNG")
        rows.append({"id": e.id, "file": filename, "split": e.split})
    (directory / "manifest.json").write_text(json.dumps({"entries": rows}, indent=2))


def make_synthetic_object_library(n_per_split: int = 8, seed: int = 0, size: int = 96) -> ObjectLibrary:
    """Star-convex colored blobs with clean alpha, split into train/test.

    A desk-scale stand-in for a real segmented-object collection; the
    blobs are star-shaped about their center so size calibration scales
    them monotonically.
    """
    rng = np.random.default_rng(seed)
    entries = []
    for split in ("train", "test"):
        for i in range(n_per_split):
            n_pts = int(rng.integers(6, 13))
            # evenly spaced angles with jitter: gaps stay < pi, so the
            # polygon always contains its center (true star shape)
            angles = (np.arange(n_pts) + rng.uniform(0.0, 0.8, size=n_pts)) * 2 * np.pi / n_pts
            radii = rng.uniform(0.28, 0.48, size=n_pts) * size
            center = size / 2.0
            pts = np.stack(
                [center + radii * np.cos(angles), center + radii * np.sin(angles)], axis=1
            )
            alpha = np.zeros((size, size), dtype=np.uint8)
            cv2.fillPoly(alpha, [np.round(pts).astype(np.int32)], 255, cv2.LINE_8)
            color = rng.integers(40, 216, size=3)
            rgba = np.empty((size, size, 4), dtype=np.uint8)
            rgba[:, :, :3] = color
            # second tone so pasted objects are not flat rectangles of color
            patch = rng.integers(40, 216, size=3)
            cv2.circle(
                rgba, (int(rng.integers(size // 4, 3 * size // 4)), int(rng.integers(size // 4, 3 * size // 4))),
                int(size * 0.18), tuple(int(v) for v in patch), -1, cv2.LINE_8,
            )
            rgba[:, :, 3] = alpha
            entries.append(ObjectEntry(id=f"{split}_{i:03d}", rgba=rgba, split=split))
    return ObjectLibrary(entries=tuple(entries))


def save_mask_set(masks: OccluderMaskSet, directory) -> None:
    """Optional pipeline cache: grayscale alpha PNGs plus JSON anchors."""
    from PIL import Image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, m in enumerate(masks.masks):
        filename = f"mask_{i:03d}.png"
        Image.fromarray(m.alpha, mode="L").save(directory / filename, format="PNG")
        rows.append(
            {
                "file": filename, "x": m.x, "y": m.y, "source_id": m.source_id,
                "src_factor": m.src_factor,
                "src_center": list(m.src_center) if m.src_center else None,
            }
        )
    doc = {
        "fill": masks.fill,
        "image_size": list(masks.image_size),
        "measured_fraction": masks.measured.occluded_fraction if masks.measured else None,
        "masks": rows,
    }
    (directory / "masks.json").write_text(json.dumps(doc, indent=2))


def load_mask_set(directory) -> OccluderMaskSet:
    from PIL import Image

    directory = Path(directory)
    doc = json.loads((directory / "masks.json").read_text())
    loaded = []
    for row in doc["masks"]:
        with Image.open(directory / row["file"]) as im:
            alpha = np.asarray(im.convert("L"), dtype=np.uint8)
        center = row.get("src_center")
        loaded.append(
            OccluderMask(
                alpha=alpha, x=int(row["x"]), y=int(row["y"]),
                source_id=row.get("source_id"),
                src_factor=row.get("src_factor"),
                src_center=tuple(center) if center else None,
            )
        )
    return OccluderMaskSet(
        masks=tuple(loaded), fill=doc["fill"], image_size=tuple(doc["image_size"])
    )
