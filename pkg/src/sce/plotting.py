"""Figures for accuracy grids and anomaly traces.

Figures are written with matplotlib's Agg backend.  SVG output is made
byte-stable by fixing the hash salt used for element ids and dropping the
date from the metadata, so identical data gives identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "svg.hashsalt": "sce",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


@dataclass
class FigureSpec:
    """What to draw; ``series`` maps a legend label to its values."""
    kind: str  # "bars" or "line"
    series: dict[str, list[float]]
    categories: list[str] = field(default_factory=list)
    errors: dict[str, list[tuple[float, float]]] = field(default_factory=dict)
    xlabel: str = ""
    ylabel: str = ""
    title: str = ""
    chance: float | None = None
    x: list[float] = field(default_factory=list)
    markers: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("bars", "line"):
            raise ValueError(f"unknown figure kind {self.kind!r}")


def _save(fig, path: Path) -> None:
    path = Path(path)
    metadata = {"Date": None} if path.suffix.lower() == ".svg" else None
    fig.savefig(path, metadata=metadata)
    plt.close(fig)


def render_figure(spec: FigureSpec, path: Path) -> None:
    with plt.rc_context(STYLE):
        if spec.kind == "bars":
            fig = _bars(spec)
        else:
            fig = _line(spec)
        _save(fig, path)


def _bars(spec: FigureSpec):
    n_cat = len(spec.categories)
    labels = list(spec.series)
    width = 0.8 / max(len(labels), 1)
    fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * n_cat * max(len(labels), 1) + 1.5), 3.2))
    for i, label in enumerate(labels):
        vals = spec.series[label]
        xs = [c + (i - (len(labels) - 1) / 2) * width for c in range(n_cat)]
        yerr = None
        if label in spec.errors:
            lo_hi = spec.errors[label]
            # clamp: the interval ends can round a hair past the estimate
            yerr = [[max(v - lo, 0.0) for v, (lo, _) in zip(vals, lo_hi)],
                    [max(hi - v, 0.0) for v, (_, hi) in zip(vals, lo_hi)]]
        ax.bar(xs, vals, width=width, label=label, yerr=yerr, capsize=2, error_kw={"linewidth": 0.8})
    if spec.chance is not None:
        ax.axhline(spec.chance, color="black", linestyle="--", linewidth=0.8, label="chance")
    ax.set_xticks(range(n_cat))
    ax.set_xticklabels(spec.categories, rotation=45, ha="right")
    ax.set_ylim(0, 1)
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return fig


def _line(spec: FigureSpec):
    fig, ax = plt.subplots(figsize=(5.0, 3.0))
    for label, vals in spec.series.items():
        xs = spec.x if spec.x else list(range(len(vals)))
        ax.plot(xs, vals, label=label, linewidth=1.2)
    for m in spec.markers:
        ax.axvline(m, color="gray", linestyle=":", linewidth=0.8)
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    if spec.title:
        ax.set_title(spec.title)
    if len(spec.series) > 1:
        ax.legend(frameon=False, fontsize=7)
    fig.tight_layout()
    return fig


def accuracy_figure(rows: Sequence, n_choices: int = 4, title: str = "") -> FigureSpec:
    """Grouped bars: one group per condition, one bar per variant, Wilson whiskers."""
    categories: list[str] = []
    series: dict[str, list[float]] = {}
    errors: dict[str, list[tuple[float, float]]] = {}
    for st in rows:
        if st.condition_id not in categories:
            categories.append(st.condition_id)
    index = {c: i for i, c in enumerate(categories)}
    for st in rows:
        vals = series.setdefault(st.variant, [0.0] * len(categories))
        errs = errors.setdefault(st.variant, [(0.0, 0.0)] * len(categories))
        vals[index[st.condition_id]] = st.accuracy
        errs[index[st.condition_id]] = st.ci
    return FigureSpec("bars", series, categories, errors, "condition", "accuracy", title, 1.0 / n_choices)


def anomaly_figure(report, t_marker: Sequence[float] = ()) -> FigureSpec:
    return FigureSpec("line", {"smoothed score": [float(v) for v in report.smoothed]},
                      xlabel="frame", ylabel="anomaly score", x=[float(i) for i in report.frame_indices],
                      markers=list(t_marker))
