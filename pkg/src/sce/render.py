"""Rasterize feature vectors into 8-bit gray-scale images.

Every shape is tested against a 2x2 grid of sub-pixel sample points per
pixel; the pixel value blends background and fill by the covered fraction.
Only float64 arithmetic in a fixed order is involved, so the output is
bit-exact across runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np
from PIL import Image as PILImage

if TYPE_CHECKING:
    from .generator import FeatureVector

SHADE_TABLE = (0, 42, 84, 126, 168, 210)
SIZE_TABLE = (6, 8, 10, 12, 14, 16)
BACKGROUND = 255
_SUB = (0.25, 0.75)


@dataclass(frozen=True)
class RenderConfig:
    width: int = 64
    height: int = 64
    background: int = BACKGROUND


def _regular_polygon(n: int, radius: float, phase_deg: float) -> np.ndarray:
    angles = np.deg2rad(phase_deg + 360.0 * np.arange(n) / n)
    return np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)


@lru_cache(maxsize=None)
def shape_polygon(shape: str, radius: float) -> np.ndarray | None:
    """Vertices (x, y) relative to the center, y pointing down. None for circles."""
    if shape == "circle":
        return None
    if shape == "triangle":
        return _regular_polygon(3, radius, -90.0)
    if shape == "square":
        return _regular_polygon(4, radius, 45.0)
    if shape == "hexagon":
        return _regular_polygon(6, radius, 0.0)
    if shape == "star":
        inner = radius * math.sin(math.radians(18)) / math.sin(math.radians(126))
        outer = _regular_polygon(5, radius, -90.0)
        inner_pts = _regular_polygon(5, inner, -90.0 + 36.0)
        pts = np.empty((10, 2))
        pts[0::2] = outer
        pts[1::2] = inner_pts
        return pts
    raise ValueError(f"unknown shape {shape!r}")


def _inside_polygon(x: np.ndarray, y: np.ndarray, poly: np.ndarray) -> np.ndarray:
    # even-odd crossing test
    inside = np.zeros(x.shape, dtype=bool)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > y) != (y2 > y)
        xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xc)
    return inside


def draw_objects(shape: str, diameter: float, gray: int, cells: Sequence[int],
                 cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Draw identical shapes centered in the given 3x3 grid cells."""
    shape = getattr(shape, "value", shape)
    w, h = cfg.width, cfg.height
    coverage = np.zeros((h, w), dtype=np.int64)
    radius = diameter / 2.0
    poly = shape_polygon(shape, radius)
    cw, ch = w / 3.0, h / 3.0
    for cell in cells:
        row, col = divmod(int(cell), 3)
        cx, cy = (col + 0.5) * cw, (row + 0.5) * ch
        x0 = max(int(math.floor(cx - radius)) - 1, 0)
        x1 = min(int(math.ceil(cx + radius)) + 1, w)
        y0 = max(int(math.floor(cy - radius)) - 1, 0)
        y1 = min(int(math.ceil(cy + radius)) + 1, h)
        px = np.arange(x0, x1, dtype=np.float64)
        py = np.arange(y0, y1, dtype=np.float64)
        for sy in _SUB:
            for sx in _SUB:
                X, Y = np.meshgrid(px + sx - cx, py + sy - cy)
                if poly is None:
                    hit = X * X + Y * Y <= radius * radius
                else:
                    hit = _inside_polygon(X, Y, poly)
                coverage[y0:y1, x0:x1] += hit
    coverage = np.minimum(coverage, 4)
    bg = cfg.background
    pixels = (bg * (4 - coverage) + int(gray) * coverage + 2) // 4
    return pixels.astype(np.uint8)


def render(features: "FeatureVector", cfg: RenderConfig = RenderConfig()) -> np.ndarray:
    """Render ``features`` as an ``(height, width)`` uint8 image."""
    return draw_objects(features.shape.value, SIZE_TABLE[features.size_idx],
                        SHADE_TABLE[features.shade_idx], features.occupied_cells, cfg)


def write_pgm(path: Path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(image.tobytes())


def read_image(path: Path) -> np.ndarray:
    """Load a PGM/PNG/... file as uint8, gray (H, W) or RGB (H, W, 3)."""
    with PILImage.open(path) as im:
        if im.mode in ("L", "P;L"):
            return np.asarray(im, dtype=np.uint8).copy()
        if im.mode in ("I;16", "I"):
            arr = np.asarray(im)
            return (arr >> 8).astype(np.uint8) if arr.max() > 255 else arr.astype(np.uint8)
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
