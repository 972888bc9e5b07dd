"""Seedable multi-crop augmentation.

Each source image yields 2 global 224x224 views and 6 local 96x96 views.
Per view: square random-area crop -> bilinear resize -> brightness ->
contrast -> replicate to 3 channels -> saturation -> hue -> rotation with
edge-replicated borders -> per-image standardization. Saturation and hue
are exact no-ops on pure grayscale but are applied as standard color ops
so the pipeline also behaves on real color input.

Everything is a pure function of (config seed, sample seed); augmenting
different samples in parallel workers cannot change any view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

_STD_FLOOR = 1e-6


@dataclass(frozen=True)
class CropSpec:
    count: int
    size: int
    scale_min: float
    scale_max: float

    def __post_init__(self):
        if self.count < 0 or self.size <= 0:
            raise ValueError("count must be >= 0 and size > 0")
        if not 0.0 < self.scale_min <= self.scale_max <= 1.0:
            raise ValueError("need 0 < scale_min <= scale_max <= 1")


@dataclass(frozen=True)
class AugmentConfig:
    global_crop: CropSpec = CropSpec(count=2, size=224, scale_min=0.8, scale_max=1.0)
    local_crop: CropSpec = CropSpec(count=6, size=96, scale_min=0.5, scale_max=0.7)
    jitter_range: float = 0.15
    rotation_deg: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.jitter_range < 0 or self.rotation_deg < 0:
            raise ValueError("jitter_range and rotation_deg must be >= 0")

    @property
    def view_count(self) -> int:
        return self.global_crop.count + self.local_crop.count


@dataclass
class ViewBatch:
    views: list  # (3, S, S) float32 arrays, zero mean / unit variance each
    sizes: list  # per-view pixel size


@dataclass(frozen=True)
class ViewParams:
    """Sampled augmentation parameters for one view (exposed for tests)."""

    side: int
    top: int
    left: int
    brightness: float
    contrast: float
    saturation: float
    hue: float  # additive hue shift, fraction of a full turn
    rotation: float  # degrees


def draw_view_params(shape, spec: CropSpec, cfg: AugmentConfig, rng: np.random.Generator) -> ViewParams:
    h, w = shape
    area = rng.uniform(spec.scale_min, spec.scale_max) * h * w
    side = int(round(math.sqrt(area)))
    side = max(1, min(side, min(h, w)))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    jr = cfg.jitter_range
    return ViewParams(
        side=side,
        top=top,
        left=left,
        brightness=float(rng.uniform(1.0 - jr, 1.0 + jr)),
        contrast=float(rng.uniform(1.0 - jr, 1.0 + jr)),
        saturation=float(rng.uniform(1.0 - jr, 1.0 + jr)),
        hue=float(rng.uniform(-jr, jr)),
        rotation=float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)),
    )


def standardize(view: np.ndarray) -> np.ndarray:
    """Shift/scale to zero mean and unit variance over the whole view.

    Statistics accumulate in float64 and the mean is rounded to float32
    before subtraction, so a constant view cancels exactly and maps to all
    zeros (division guarded at 1e-6)."""
    arr = np.asarray(view, dtype=np.float32)
    if arr.size == 0:
        raise ValueError("cannot standardize an empty image")
    mean = np.float32(arr.mean(dtype=np.float64))
    centered = arr - mean
    flat = centered.ravel()
    std = math.sqrt(max(0.0, float(np.dot(flat, flat)) / flat.size))
    return centered / np.float32(max(std, _STD_FLOOR))


_LUMA = np.array([0.299, 0.587, 0.114])
_EYE3 = np.eye(3)
_GRAY_AXIS_CROSS = (1.0 / math.sqrt(3.0)) * np.array([[0.0, -1, 1], [1, 0, -1], [-1, 1, 0]])
_GRAY_AXIS_OUTER = np.full((3, 3), 1.0 / 3.0)
_LUMA_BLEND = np.outer(np.ones(3), _LUMA)


def _hue_matrix(shift: float) -> np.ndarray:
    # rotation about the achromatic (1,1,1) axis; identity on grayscale
    theta = 2.0 * math.pi * shift
    c, s = math.cos(theta), math.sin(theta)
    return c * _EYE3 + s * _GRAY_AXIS_CROSS + (1.0 - c) * _GRAY_AXIS_OUTER


def _saturation_matrix(factor: float) -> np.ndarray:
    # blend each pixel toward its luma; identity at factor 1
    return factor * _EYE3 + (1.0 - factor) * _LUMA_BLEND


def _render_view(image: np.ndarray, size: int, p: ViewParams) -> np.ndarray:
    crop = image[p.top : p.top + p.side, p.left : p.left + p.side]
    view = cv2.resize(crop, (size, size), interpolation=cv2.INTER_LINEAR)
    # brightness scale, then contrast about the post-brightness mean,
    # fused into a single affine pass
    scale = np.float32(p.contrast * p.brightness)
    offset = np.float32((1.0 - p.contrast) * p.brightness * float(view.mean()))
    view = view * scale + offset
    rgb = cv2.cvtColor(view, cv2.COLOR_GRAY2RGB)
    # saturation blend then hue rotation, composed into one color matrix
    color = _hue_matrix(p.hue) @ _saturation_matrix(p.saturation)
    rgb = cv2.transform(rgb, color.astype(np.float32))
    center = ((size - 1) / 2.0, (size - 1) / 2.0)
    mat = cv2.getRotationMatrix2D(center, p.rotation, 1.0)
    rgb = cv2.warpAffine(
        rgb, mat, (size, size), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
    )
    return standardize(rgb).transpose(2, 0, 1)


def _validate_source(image: np.ndarray, cfg: AugmentConfig) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D grayscale image, got shape {arr.shape}")
    h, w = arr.shape
    for spec in (cfg.global_crop, cfg.local_crop):
        if spec.count == 0:
            continue
        if round(math.sqrt(spec.scale_max * h * w)) > min(h, w):
            raise ValueError(
                f"image {h}x{w} is smaller than the minimum croppable region for "
                f"scale_max={spec.scale_max} (largest crop would not fit)"
            )
    if float(arr.max()) > 1.5:  # accept [0, 255] or [0, 1] input
        return np.multiply(arr, np.float32(1.0 / 255.0), dtype=np.float32)
    return arr.astype(np.float32)


def make_views(image: np.ndarray, cfg: AugmentConfig, sample_seed: int) -> ViewBatch:
    """Render the full multi-crop view set for one image.

    Fully determined by (cfg.seed, sample_seed); calling twice returns
    bit-identical views.
    """
    arr = _validate_source(image, cfg)
    rng = np.random.default_rng(
        np.random.SeedSequence([int(cfg.seed) & ((1 << 64) - 1), int(sample_seed) & ((1 << 64) - 1)])
    )
    views, sizes = [], []
    for spec in (cfg.global_crop, cfg.local_crop):
        for _ in range(spec.count):
            params = draw_view_params(arr.shape, spec, cfg, rng)
            views.append(_render_view(arr, spec.size, params))
            sizes.append(spec.size)
    return ViewBatch(views=views, sizes=sizes)


def center_view(image: np.ndarray, size: int = 224) -> np.ndarray:
    """Deterministic inference view: center square crop, bilinear resize,
    channel triplication, standardization. Returns (3, size, size)."""
    arr = np.asarray(image).astype(np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D grayscale image, got shape {arr.shape}")
    if float(arr.max()) > 1.5:
        arr = arr / np.float32(255.0)
    h, w = arr.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    crop = arr[top : top + side, left : left + side]
    view = cv2.resize(crop, (size, size), interpolation=cv2.INTER_LINEAR)
    return np.ascontiguousarray(standardize(np.repeat(view[None, :, :], 3, axis=0)))
