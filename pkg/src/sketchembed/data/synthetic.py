"""A desk-scale synthetic cross-domain dataset.

Each category is a parametric shape family. A category's "photos" are the
shape rendered filled, with texture inside and soft clutter behind it; its
"sketches" are jittered stroke traces of the same instance's outline. The
instance group of a sketch names the photo it was traced from, which is
what instance-level triplet sampling keys on.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .imaging import RasterImage
from .manifest import DatasetManifest, ManifestItem
from .strokes import StrokeSketch

PHOTO_SIZE = 80
SKETCH_CANVAS = 256
_SS = 4  # supersampling factor for the filled render


def _ring(n, rng, r=0.30, squash=1.0, vertex_noise=0.02):
    """n points around a jittered center, common base for most families."""
    cx = 0.5 + rng.uniform(-0.03, 0.03)
    cy = 0.5 + rng.uniform(-0.03, 0.03)
    rot = rng.uniform(0.0, 2 * math.pi)
    rad = r * rng.uniform(0.88, 1.12)
    pts = []
    for k in range(n):
        ang = rot + 2 * math.pi * k / n
        rk = rad * (1.0 + rng.normal(0.0, vertex_noise))
        pts.append((cx + rk * math.cos(ang),
                    cy + rk * squash * math.sin(ang)))
    return pts


def _ngon(n):
    return lambda rng: _ring(n, rng)


def _star(n):
    def gen(rng):
        inner = rng.uniform(0.40, 0.55)
        cx = 0.5 + rng.uniform(-0.03, 0.03)
        cy = 0.5 + rng.uniform(-0.03, 0.03)
        rot = rng.uniform(0.0, 2 * math.pi)
        rad = 0.33 * rng.uniform(0.88, 1.12)
        pts = []
        for k in range(2 * n):
            ang = rot + math.pi * k / n
            rk = rad if k % 2 == 0 else rad * inner
            rk *= 1.0 + rng.normal(0.0, 0.02)
            pts.append((cx + rk * math.cos(ang), cy + rk * math.sin(ang)))
        return pts
    return gen


def _circle(rng):
    return _ring(48, rng, vertex_noise=0.004)


def _ellipse(rng):
    return _ring(48, rng, squash=rng.uniform(0.45, 0.65), vertex_noise=0.004)


def _semicircle(rng):
    cx = 0.5 + rng.uniform(-0.03, 0.03)
    cy = 0.52 + rng.uniform(-0.03, 0.03)
    rad = 0.32 * rng.uniform(0.88, 1.12)
    tilt = rng.uniform(-0.3, 0.3)
    pts = []
    for k in range(25):
        ang = tilt + math.pi * k / 24.0
        pts.append((cx + rad * math.cos(ang), cy - rad * math.sin(ang)))
    return pts  # the closing chord is the polygon's implicit last edge


def _box_path(corners, rng):
    """Jitter, rotate, and recenter an axis-aligned vertex list."""
    cx = 0.5 + rng.uniform(-0.03, 0.03)
    cy = 0.5 + rng.uniform(-0.03, 0.03)
    rot = rng.uniform(0.0, 2 * math.pi)
    s = rng.uniform(0.88, 1.12)
    c, sn = math.cos(rot), math.sin(rot)
    pts = []
    for x, y in corners:
        x *= s * (1.0 + rng.normal(0.0, 0.02))
        y *= s * (1.0 + rng.normal(0.0, 0.02))
        pts.append((cx + c * x - sn * y, cy + sn * x + c * y))
    return pts


def _cross(rng):
    w = rng.uniform(0.09, 0.13)
    r = 0.30
    return _box_path([(-w, -r), (w, -r), (w, -w), (r, -w), (r, w), (w, w),
                      (w, r), (-w, r), (-w, w), (-r, w), (-r, -w),
                      (-w, -w)], rng)


def _arrow(rng):
    h = rng.uniform(0.10, 0.14)
    return _box_path([(-0.32, -h), (0.05, -h), (0.05, -2 * h), (0.33, 0.0),
                      (0.05, 2 * h), (0.05, h), (-0.32, h)], rng)


def _diamond(rng):
    return _ring(4, rng, squash=rng.uniform(0.55, 0.7))


def _trapezoid(rng):
    top = rng.uniform(0.12, 0.20)
    return _box_path([(-0.30, 0.22), (-top, -0.22), (top, -0.22),
                      (0.30, 0.22)], rng)


def _lshape(rng):
    t = rng.uniform(0.12, 0.18)
    return _box_path([(-0.26, -0.30), (-0.26 + t, -0.30), (-0.26 + t,
                      0.30 - t), (0.28, 0.30 - t), (0.28, 0.30),
                      (-0.26, 0.30)], rng)


def _bowtie(rng):
    h = rng.uniform(0.18, 0.24)
    return _box_path([(-0.30, -h), (0.30, h), (0.30, -h), (-0.30, h)], rng)


SHAPE_FAMILIES = (
    ("triangle", _ngon(3)),
    ("square", _ngon(4)),
    ("pentagon", _ngon(5)),
    ("hexagon", _ngon(6)),
    ("star4", _star(4)),
    ("star5", _star(5)),
    ("star6", _star(6)),
    ("circle", _circle),
    ("ellipse", _ellipse),
    ("semicircle", _semicircle),
    ("cross", _cross),
    ("arrow", _arrow),
    ("diamond", _diamond),
    ("trapezoid", _trapezoid),
    ("lshape", _lshape),
    ("bowtie", _bowtie),
)


def _resample_loop(pts, n):
    """Evenly respace a closed outline to n points by arclength."""
    loop = np.asarray(pts + [pts[0]], dtype=np.float64)
    seg = np.linalg.norm(np.diff(loop, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    targets = np.linspace(0.0, total, n, endpoint=False)
    out = np.empty((n, 2))
    out[:, 0] = np.interp(targets, cum, loop[:, 0])
    out[:, 1] = np.interp(targets, cum, loop[:, 1])
    return out


def _category_tint(index):
    ang = 2 * math.pi * ((index * 0.381966) % 1.0)
    return np.array([math.cos(ang), math.cos(ang - 2.094),
                     math.cos(ang + 2.094)]) * 0.08


def render_photo(outline, tint, rng, size=PHOTO_SIZE) -> RasterImage:
    """Fill the outline over a cluttered background, mild texture inside."""
    big = size * _SS
    mask_img = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(mask_img)
    draw.polygon([(x * big, y * big) for x, y in outline], fill=255)
    alpha = np.asarray(mask_img.resize((size, size), Image.BOX),
                       dtype=np.float64) / 255.0

    def smooth_noise(sigma, amp):
        field = ndimage.gaussian_filter(rng.standard_normal((size, size)),
                                        sigma)
        peak = np.abs(field).max()
        return amp * field / peak if peak > 0 else field

    bg = 0.76 + smooth_noise(5.0, 0.06)
    texture = smooth_noise(1.5, 0.05)
    channels = []
    for c in range(3):
        fill = np.clip(0.27 + tint[c] + texture, 0.0, 1.0)
        channels.append(alpha * fill + (1.0 - alpha) * bg)
    pixels = np.clip(np.stack(channels, axis=-1), 0.0, 1.0)
    return RasterImage(pixels.astype(np.float32), "photo")


def trace_sketch(outline, rng, canvas=SKETCH_CANVAS) -> StrokeSketch:
    """A hand-drawn trace of the outline: jittered, in 2-5 strokes."""
    loop = _resample_loop(list(map(tuple, outline)), 72)
    pts = loop * canvas + rng.normal(0.0, 2.2, size=loop.shape)
    pts = np.clip(pts, 0.0, canvas)
    pts = np.vstack([pts, pts[:1]])  # close the trace
    n = len(pts)
    k = int(rng.integers(2, 6))
    cuts = np.sort(rng.choice(np.arange(1, n - 1), size=k - 1,
                              replace=False))
    bounds = [0, *cuts.tolist(), n - 1]
    strokes = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        strokes.append([[float(x), float(y)] for x, y in pts[a:b + 1]])
    return StrokeSketch(strokes=strokes, canvas_w=canvas, canvas_h=canvas)


def make_instance_outline(category_index, instance_index, seed):
    """The shared ground-truth outline for one photo and its sketches."""
    name, gen = SHAPE_FAMILIES[category_index % len(SHAPE_FAMILIES)]
    rng = np.random.default_rng([seed, category_index, instance_index, 0])
    return name, _resample_loop(gen(rng), 96)


def synth_generate(num_categories: int, photos_per_cat: int,
                   sketches_per_cat: int, seed: int,
                   out_dir) -> DatasetManifest:
    """Generate the dataset on disk and return its manifest.

    Photos land in ``photos/<cat>/``, stroke documents in
    ``sketches/<cat>/``, and the manifest CSV at ``manifest.csv``. Sketch
    ``k`` of a category traces photo instance ``k mod photos_per_cat``.
    Sketches are split roughly 75/25 train/validation per category; the
    photo pool is tagged train.
    """
    if num_categories < 2:
        raise ValueError(f"need at least 2 categories, got {num_categories}")
    if photos_per_cat < 1 or sketches_per_cat < 0:
        raise ValueError("per-category counts must be positive")
    out_dir = Path(out_dir)
    items = []
    for ci in range(num_categories):
        family, _ = SHAPE_FAMILIES[ci % len(SHAPE_FAMILIES)]
        cat = f"c{ci:02d}_{family}"
        tint = _category_tint(ci)
        photo_dir = out_dir / "photos" / cat
        sketch_dir = out_dir / "sketches" / cat
        photo_dir.mkdir(parents=True, exist_ok=True)
        sketch_dir.mkdir(parents=True, exist_ok=True)
        outlines = []
        for pj in range(photos_per_cat):
            _, outline = make_instance_outline(ci, pj, seed)
            outlines.append(outline)
            render_rng = np.random.default_rng([seed, ci, pj, 1])
            photo = render_photo(outline, tint, render_rng)
            rel = f"photos/{cat}/p{pj:03d}.png"
            arr = (photo.pixels * 255.0).round().astype(np.uint8)
            Image.fromarray(arr, mode="RGB").save(out_dir / rel)
            items.append(ManifestItem(
                id=f"{cat}/p{pj:03d}", path=rel, category=cat,
                instance_group=f"{cat}/p{pj:03d}", domain="photo",
                split="train"))
        if sketches_per_cat >= 2:
            n_train = max(1, min(sketches_per_cat - 1,
                                 round(0.75 * sketches_per_cat)))
        else:
            n_train = sketches_per_cat
        for sk in range(sketches_per_cat):
            pj = sk % photos_per_cat
            hand_rng = np.random.default_rng([seed, ci, pj, sk, 2])
            sketch = trace_sketch(outlines[pj], hand_rng)
            rel = f"sketches/{cat}/s{sk:03d}.json"
            (out_dir / rel).write_text(sketch.to_json())
            items.append(ManifestItem(
                id=f"{cat}/s{sk:03d}", path=rel, category=cat,
                instance_group=f"{cat}/p{pj:03d}", domain="sketch",
                split="train" if sk < n_train else "validation"))
    manifest = DatasetManifest(items, out_dir)
    manifest.save_csv(out_dir / "manifest.csv")
    return manifest
