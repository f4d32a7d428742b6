"""Anomaly scores for image sequences with naive Markov-CPC.

Each frame is judged against the few frames before it: a freshly initialized
model takes one optimization step on that window, and the frame's prediction
error is turned into a z-score relative to the window's own consecutive-pair
errors.  Several independent runs are averaged and the series is smoothed.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

from .autodiff import Tape, Tensor
from .generator import Shape
from .models import IMAGE_SIZE, ModelBundle, get_variant, preprocess_images
from .render import RenderConfig, draw_objects, read_image
from .solver import mix, parallel_map

LUMA = (0.299, 0.587, 0.114)
STD_GUARD = 1e-12
FRAME_SUFFIXES = (".pgm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class AnomalyError(ValueError):
    pass


class TooSmall(AnomalyError):
    pass


class InsufficientFrames(AnomalyError):
    pass


@dataclass(frozen=True)
class AnomalyConfig:
    window: int = 5
    runs: int = 5
    sigma: float = 10.0
    crop_top: int = 30
    size: int = IMAGE_SIZE
    variant: str = "mcpc"
    seed: int = 0

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.crop_top < 0:
            raise ValueError("crop_top must be >= 0")
        get_variant(self.variant)


@dataclass
class AnomalyReport:
    """Per-frame scores; row ``i`` belongs to frame ``frame_indices[i]``."""
    frame_indices: list[int]
    run_scores: np.ndarray
    mean_scores: np.ndarray
    smoothed: np.ndarray
    config: AnomalyConfig
    frame_files: list[str] = field(default_factory=list)

    def write_csv(self, path: Path) -> None:
        runs = self.run_scores.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["frame_idx"] + [f"run_{r}" for r in range(runs)] + ["mean_score", "smoothed_score"])
            for i, idx in enumerate(self.frame_indices):
                w.writerow([idx] + [repr(float(v)) for v in self.run_scores[i]]
                           + [repr(float(self.mean_scores[i])), repr(float(self.smoothed[i]))])

    def metadata(self) -> dict:
        return {"config": asdict(self.config), "frame_files": list(self.frame_files)}


def to_gray(image: np.ndarray) -> np.ndarray:
    """Luma conversion rounded to uint8; gray input passes through."""
    image = np.asarray(image)
    if image.ndim == 2:
        return image.astype(np.uint8)
    if image.ndim == 3 and image.shape[2] == 1:
        return image[..., 0].astype(np.uint8)
    if image.ndim != 3 or image.shape[2] < 3:
        raise AnomalyError(f"unsupported frame shape {image.shape}")
    rgb = image[..., :3].astype(np.float64)
    y = LUMA[0] * rgb[..., 0] + LUMA[1] * rgb[..., 1] + LUMA[2] * rgb[..., 2]
    return np.clip(np.rint(y), 0, 255).astype(np.uint8)


def preprocess_frame(raw: np.ndarray, crop_top: int = 30, size: int = IMAGE_SIZE) -> np.ndarray:
    """Crop the top rows, convert to gray and area-average down to ``size x size``."""
    raw = np.asarray(raw)
    if raw.shape[0] <= crop_top:
        raise TooSmall(f"frame height {raw.shape[0]} does not exceed crop_top={crop_top}")
    gray = to_gray(raw[crop_top:])
    h, w = gray.shape
    if h < size or w < size:
        raise TooSmall(f"cropped frame {h}x{w} is smaller than {size}x{size}")
    if (h, w) == (size, size):
        return gray.copy()
    # BOX resampling is exact area averaging
    im = PILImage.fromarray(gray, mode="L").resize((size, size), PILImage.Resampling.BOX)
    return np.asarray(im, dtype=np.uint8).copy()


def list_frames(directory: Path, pattern: str | None = None) -> list[Path]:
    """Frame files in lexicographic order, or ordered by the integer a regex captures.

    With ``pattern`` only file names it matches are kept; its first group
    (or the whole match) must be an integer frame index.
    """
    directory = Path(directory)
    files = [p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES]
    if pattern is None:
        return sorted(files, key=lambda p: p.name)
    rx = re.compile(pattern)
    keyed = []
    for p in files:
        m = rx.search(p.name)
        if m is None:
            continue
        keyed.append((int(m.group(1) if m.groups() else m.group(0)), p.name, p))
    return [p for _, _, p in sorted(keyed)]


def load_frames(paths: Sequence[Path], crop_top: int = 30, size: int = IMAGE_SIZE) -> list[np.ndarray]:
    return [preprocess_frame(read_image(p), crop_top, size) for p in paths]


def anomaly_score(eps_p: Sequence[float], eps_c: float) -> float:
    """z-score of ``eps_c`` against the window errors (population std, guarded)."""
    e = np.asarray(eps_p, dtype=np.float64)
    if e.size < 1:
        raise AnomalyError("need at least one window error")
    mean = e.sum() / e.size
    std = math.sqrt(float(((e - mean) ** 2).sum() / e.size))
    return float((float(eps_c) - mean) / (std + STD_GUARD))


def gaussian_smooth(scores: Sequence[float], sigma: float) -> np.ndarray:
    """Gaussian smoothing truncated at ``ceil(4 sigma)``, renormalized at the edges."""
    x = np.asarray(scores, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0 or x.size == 0:
        return x.copy()
    radius = int(math.ceil(4 * sigma))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    num = np.convolve(x, kernel, mode="full")[radius:radius + x.size]
    den = np.convolve(np.ones_like(x), kernel, mode="full")[radius:radius + x.size]
    return num / den


def frame_errors(bundle: ModelBundle, frames: Sequence[np.ndarray]) -> tuple[np.ndarray, float]:
    """Consecutive-pair errors of all but the last frame, and the last frame's error.

    Frames go through the network one at a time: batched matrix products may
    round rows differently, and identical frames must give identical errors.
    """
    x = preprocess_images(frames, bundle.dtype)
    z = np.concatenate([bundle.encode(Tape(), Tensor(x[i:i + 1])).data for i in range(len(x))])
    pred = np.concatenate([bundle.predict(Tape(), Tensor(z[i:i + 1])).data for i in range(len(z) - 1)])
    eps = ((pred.astype(np.float64) - z[1:].astype(np.float64)) ** 2).sum(axis=1)
    return eps[:-1], float(eps[-1])


def _score_frame(args) -> float:
    cfg, model_cfg, frames, c, r = args
    bundle = ModelBundle.fresh(model_cfg, mix(cfg.seed, c, r))
    window = frames[:-1]
    bundle.train_step(window)
    eps_p, eps_c = frame_errors(bundle, frames)
    return anomaly_score(eps_p, eps_c)


def score_video(frames: Sequence[np.ndarray], cfg: AnomalyConfig = AnomalyConfig(), threads: int = 1,
                frame_files: Sequence[str] = ()) -> AnomalyReport:
    """Score every frame that has ``cfg.window`` predecessors.

    ``frames`` are preprocessed ``size x size`` gray images.  Each (frame,
    run) pair gets its own freshly initialized model, so frames can be scored
    in any order.
    """
    frames = [np.asarray(f, dtype=np.uint8) for f in frames]
    k = cfg.window
    if len(frames) < k + 1:
        raise InsufficientFrames(f"need at least {k + 1} frames, got {len(frames)}")
    model_cfg = get_variant(cfg.variant)
    indices = list(range(k, len(frames)))
    jobs = [(cfg, model_cfg, frames[c - k:c + 1], c, r) for c in indices for r in range(cfg.runs)]
    flat = parallel_map(_score_frame, jobs, threads)
    runs = np.asarray(flat, dtype=np.float64).reshape(len(indices), cfg.runs)
    mean = runs.sum(axis=1) / cfg.runs
    return AnomalyReport(indices, runs, mean, gaussian_smooth(mean, cfg.sigma), cfg, list(frame_files))


def synthetic_break_video(num_frames: int = 200, t_break: int | None = None, seed: int = 0,
                          step: int = 1, jump: int = 25,
                          render_cfg: RenderConfig = RenderConfig()) -> tuple[list[np.ndarray], int]:
    """Objects whose gray level rises by ``step`` per frame and drops by ``jump`` at ``t_break``.

    Shape, size and cells are drawn once from ``seed``; ``t_break`` defaults
    to a seeded frame in the middle half of the sequence.
    """
    rng = np.random.default_rng(seed)
    shape = list(Shape)[int(rng.integers(len(Shape)))]
    diameter = int(rng.integers(10, 17))
    count = int(rng.integers(1, 10))
    cells = sorted(int(c) for c in rng.permutation(9)[:count])
    if t_break is None:
        t_break = int(rng.integers(num_frames // 4, 3 * num_frames // 4 + 1))
    if not 0 < t_break < num_frames:
        raise ValueError("t_break must fall inside the sequence")
    levels = [jump + step * t - (jump if t >= t_break else 0) for t in range(num_frames)]
    if min(levels) < 0 or max(levels) >= render_cfg.background:
        raise ValueError("gray levels leave the valid range; lower num_frames, step or jump")
    frames = [draw_objects(shape.value, diameter, g, cells, render_cfg) for g in levels]
    return frames, t_break
