"""Raster images and the pixel-level preprocessing stages.

Everything here follows one convention: ink and edges are dark (0.0) on a
white (1.0) background, values always inside [0, 1]. Sketch rasters,
skeletons, and edge maps therefore all look alike to the branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DOMAINS = ("sketch", "photo", "edgemap")


@dataclass
class RasterImage:
    """Grayscale [H,W] or color [H,W,3] pixels in [0,1] plus a domain tag."""

    pixels: np.ndarray
    domain: str

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim not in (2, 3) or \
                (self.pixels.ndim == 3 and self.pixels.shape[2] != 3):
            raise ValueError(
                f"pixels must be [H,W] or [H,W,3], got {self.pixels.shape}")
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}, expected one "
                             f"of {DOMAINS}")
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if lo < -1e-6 or hi > 1 + 1e-6:
            raise ValueError(f"pixel values outside [0,1]: [{lo}, {hi}]")
        np.clip(self.pixels, 0.0, 1.0, out=self.pixels)

    @property
    def size(self) -> tuple:
        return self.pixels.shape[:2]

    def gray(self) -> np.ndarray:
        if self.pixels.ndim == 2:
            return self.pixels
        return (self.pixels @ np.array([0.299, 0.587, 0.114],
                                       dtype=np.float32))

    def ink_mask(self) -> np.ndarray:
        """Foreground = dark pixels (below mid-gray)."""
        return self.gray() < 0.5


def _neighbors(padded):
    """The eight neighbourhoods P2..P9, clockwise from north."""
    return (padded[:-2, 1:-1], padded[:-2, 2:], padded[1:-1, 2:],
            padded[2:, 2:], padded[2:, 1:-1], padded[2:, :-2],
            padded[1:-1, :-2], padded[:-2, :-2])


def _thin_pass(fg: np.ndarray, second: bool) -> bool:
    padded = np.pad(fg, 1)
    p2, p3, p4, p5, p6, p7, p8, p9 = _neighbors(padded)
    ring = [p2, p3, p4, p5, p6, p7, p8, p9, p2]
    b = sum(n.astype(np.uint8) for n in ring[:8])
    a = sum(((~ring[i]) & ring[i + 1]).astype(np.uint8) for i in range(8))
    if second:
        cond_c = ~(p2 & p4 & p8)
        cond_d = ~(p2 & p6 & p8)
    else:
        cond_c = ~(p2 & p4 & p6)
        cond_d = ~(p4 & p6 & p8)
    kill = fg & (b >= 2) & (b <= 6) & (a == 1) & cond_c & cond_d
    if not kill.any():
        return False
    fg &= ~kill
    return True


def skeletonize(img: RasterImage) -> RasterImage:
    """Thin dark strokes to one-pixel width (two-subiteration thinning).

    Foreground connectivity is preserved; a blank image passes through
    unchanged. The result keeps the input's domain tag.
    """
    fg = img.ink_mask().copy()
    while True:
        changed = _thin_pass(fg, second=False)
        changed |= _thin_pass(fg, second=True)
        if not changed:
            break
    out = np.where(fg, np.float32(0.0), np.float32(1.0))
    return RasterImage(out, img.domain)


def extract_edges(photo: RasterImage, low: float, high: float) -> RasterImage:
    """Gradient edges with non-maximum suppression and hysteresis.

    The gradient magnitude is normalized to [0,1] before thresholding, so
    ``low``/``high`` are relative to the strongest edge in the image. Weak
    pixels survive only when 8-connected to a strong one, and isolated
    single pixels are dropped afterwards.
    """
    if not (0.0 <= low < high <= 1.0):
        raise ValueError(
            f"thresholds must satisfy 0 <= low < high <= 1, got low={low} "
            f"high={high}")
    gray = ndimage.gaussian_filter(photo.gray().astype(np.float64), sigma=1.0)
    gy = ndimage.sobel(gray, axis=0, mode="reflect")
    gx = ndimage.sobel(gray, axis=1, mode="reflect")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    h, w = mag.shape
    if peak == 0.0:
        return RasterImage(np.ones((h, w), dtype=np.float32), "edgemap")
    mag /= peak

    # suppress non-maxima along the true gradient direction, sampling the
    # neighbours at unit distance by bilinear interpolation (snapping the
    # direction to 45-degree bins fragments diagonal edges into dots)
    rr, cc = np.indices(mag.shape)
    denom = np.where(mag > 0, mag * peak, 1.0)
    dy = gy / denom
    dx = gx / denom
    fwd = ndimage.map_coordinates(mag, [rr + dy, cc + dx], order=1,
                                  mode="constant")
    bwd = ndimage.map_coordinates(mag, [rr - dy, cc - dx], order=1,
                                  mode="constant")
    # >= on one side, > on the other: a two-pixel plateau keeps one line
    keep = (mag > 0) & (mag >= bwd) & (mag > fwd)
    nms = np.where(keep, mag, 0.0)

    strong = nms >= high
    weak = nms >= low
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if count:
        strong_ids = np.unique(labels[strong])
        strong_ids = strong_ids[strong_ids > 0]
        edges = np.isin(labels, strong_ids)
    else:
        edges = np.zeros_like(weak)

    neighbor_kernel = np.ones((3, 3), dtype=int)
    neighbor_kernel[1, 1] = 0
    neighbors = ndimage.convolve(edges.astype(int), neighbor_kernel,
                                 mode="constant")
    edges &= neighbors >= 1

    out = np.where(edges, np.float32(0.0), np.float32(1.0))
    return RasterImage(out, "edgemap")


@dataclass(frozen=True)
class GeometricParams:
    """One draw of the augmentation parameters.

    ``crop_u``/``crop_v`` are fractions in [0,1) mapped onto the valid
    offset range once the post-scale extent is known.
    """

    scale: float
    rotation_deg: float
    flip: bool
    crop_u: float
    crop_v: float


def draw_geometric_params(seed) -> GeometricParams:
    rng = np.random.default_rng(seed)
    return GeometricParams(
        scale=float(rng.uniform(0.9, 1.1)),
        rotation_deg=float(rng.uniform(-5.0, 5.0)),
        flip=bool(rng.random() < 0.5),
        crop_u=float(rng.random()),
        crop_v=float(rng.random()),
    )


def apply_geometric(img: RasterImage, params: GeometricParams,
                    crop_size: int) -> RasterImage:
    """Scale, rotate, crop, maybe flip; one bilinear resampling pass."""
    arr = img.pixels
    h, w = arr.shape[:2]
    hs = int(round(h * params.scale))
    ws = int(round(w * params.scale))
    if hs < crop_size or ws < crop_size:
        raise ValueError(
            f"image {h}x{w} scaled by {params.scale:.3f} is {hs}x{ws}, "
            f"smaller than the {crop_size} crop")
    theta = math.radians(params.rotation_deg)
    c, s = math.cos(theta), math.sin(theta)
    matrix = np.array([[c, -s], [s, c]]) / params.scale
    c_out = np.array([(hs - 1) / 2.0, (ws - 1) / 2.0])
    c_in = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = c_in - matrix @ c_out

    def warp(channel):
        return ndimage.affine_transform(
            channel.astype(np.float64), matrix, offset=offset,
            output_shape=(hs, ws), order=1, mode="nearest")

    if arr.ndim == 2:
        warped = warp(arr)
    else:
        warped = np.stack([warp(arr[..., i]) for i in range(3)], axis=-1)

    r0 = min(int(params.crop_u * (hs - crop_size + 1)), hs - crop_size)
    c0 = min(int(params.crop_v * (ws - crop_size + 1)), ws - crop_size)
    out = warped[r0:r0 + crop_size, c0:c0 + crop_size]
    if params.flip:
        out = out[:, ::-1]
    return RasterImage(np.clip(out, 0.0, 1.0).astype(np.float32), img.domain)


def augment_geometric(img: RasterImage, crop_size: int, seed) -> RasterImage:
    """Random scale/rotation/crop/flip, a pure function of (img, seed)."""
    return apply_geometric(img, draw_geometric_params(seed), crop_size)


def center_crop(img: RasterImage, crop_size: int) -> RasterImage:
    """Deterministic evaluation-time counterpart of augment_geometric."""
    identity = GeometricParams(scale=1.0, rotation_deg=0.0, flip=False,
                               crop_u=0.5, crop_v=0.5)
    return apply_geometric(img, identity, crop_size)
