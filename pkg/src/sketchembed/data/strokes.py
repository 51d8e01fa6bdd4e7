"""Vector sketches: the stroke document format, rasterization, and the
stroke-removal augmentation.

A sketch is an ordered list of strokes; a stroke is an ordered list of
(x, y) points on an integer canvas. The JSON form is the interchange
format the drawing surface speaks, so serialization is canonical
(sorted keys, no whitespace) and round-trips byte-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from .imaging import RasterImage

DOC_VERSION = 1
_SUPERSAMPLE = 4


@dataclass
class StrokeSketch:
    """Ordered strokes on a w-by-h canvas; points are (x, y) pairs."""

    strokes: list = field(default_factory=list)
    canvas_w: int = 256
    canvas_h: int = 256

    def __post_init__(self):
        if not self.strokes:
            raise ValueError("a sketch needs at least one stroke")
        if self.canvas_w < 1 or self.canvas_h < 1:
            raise ValueError(
                f"bad canvas {self.canvas_w}x{self.canvas_h}")
        clean = []
        for si, stroke in enumerate(self.strokes):
            if len(stroke) < 1:
                raise ValueError(f"stroke {si} is empty")
            pts = []
            for x, y in stroke:
                x, y = float(x), float(y)
                if not (0 <= x <= self.canvas_w and 0 <= y <= self.canvas_h):
                    raise ValueError(
                        f"point ({x}, {y}) in stroke {si} is outside the "
                        f"{self.canvas_w}x{self.canvas_h} canvas")
                pts.append((x, y))
            clean.append(pts)
        self.strokes = clean

    @property
    def num_strokes(self) -> int:
        return len(self.strokes)

    def to_doc(self) -> dict:
        return {
            "version": DOC_VERSION,
            "canvas": {"w": self.canvas_w, "h": self.canvas_h},
            "strokes": [[[x, y] for x, y in s] for s in self.strokes],
        }

    def to_json(self) -> str:
        """Canonical form: sorted keys, compact separators."""
        return json.dumps(self.to_doc(), sort_keys=True,
                          separators=(",", ":"))


def sketch_from_doc(doc: dict) -> StrokeSketch:
    if not isinstance(doc, dict):
        raise ValueError(f"sketch document must be an object, got "
                         f"{type(doc).__name__}")
    version = doc.get("version")
    if version != DOC_VERSION:
        raise ValueError(f"unsupported sketch document version {version!r}")
    canvas = doc.get("canvas")
    if not isinstance(canvas, dict) or "w" not in canvas or "h" not in canvas:
        raise ValueError("sketch document is missing canvas w/h")
    strokes = doc.get("strokes")
    if not isinstance(strokes, list):
        raise ValueError("sketch document is missing the strokes list")
    return StrokeSketch(strokes=strokes, canvas_w=int(canvas["w"]),
                        canvas_h=int(canvas["h"]))


def sketch_from_json(text: str) -> StrokeSketch:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"not valid JSON: {exc}") from exc
    return sketch_from_doc(doc)


def rasterize(sketch: StrokeSketch, size: int, line_width: int = 2
              ) -> RasterImage:
    """Render to a size-by-size grayscale raster, dark ink on white.

    Drawing happens on a supersampled canvas and is box-filtered down,
    which keeps thin diagonal strokes from breaking up.
    """
    if size < 32:
        raise ValueError(f"raster size {size} is too small, need >= 32")
    if line_width < 1:
        raise ValueError(f"line width must be positive, got {line_width}")
    big = size * _SUPERSAMPLE
    sx = big / sketch.canvas_w
    sy = big / sketch.canvas_h
    canvas = Image.new("L", (big, big), color=255)
    draw = ImageDraw.Draw(canvas)
    lw = line_width * _SUPERSAMPLE
    for stroke in sketch.strokes:
        pts = [(x * sx, y * sy) for x, y in stroke]
        if len(pts) == 1:
            x, y = pts[0]
            r = lw / 2
            draw.ellipse([x - r, y - r, x + r, y + r], fill=0)
        else:
            draw.line(pts, fill=0, width=lw, joint="curve")
    small = canvas.resize((size, size), Image.BOX)
    pixels = np.asarray(small, dtype=np.float32) / 255.0
    return RasterImage(pixels, "sketch")


def augment_stroke_removal(sketch: StrokeSketch, seed) -> StrokeSketch:
    """Drop later portions of the drawing at random.

    Sketches with fewer than 10 strokes pass through unchanged. Otherwise
    the stroke sequence is split into four contiguous groups in drawing
    order (earlier groups take the extras when the count is not a
    multiple of four). The first group is always kept; each of the other
    three survives an independent coin flip.
    """
    n = sketch.num_strokes
    if n < 10:
        return sketch
    rng = np.random.default_rng(seed)
    groups = np.array_split(np.arange(n), 4)
    keep = list(groups[0])
    for g in groups[1:]:
        if rng.random() < 0.5:
            keep.extend(g)
    kept = [sketch.strokes[i] for i in keep]
    return StrokeSketch(strokes=kept, canvas_w=sketch.canvas_w,
                        canvas_h=sketch.canvas_h)
