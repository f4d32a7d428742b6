import re

from sce.plotting import FigureSpec, accuracy_figure, render_figure
from sce.solver import AccuracyStats

import pytest


def _stats():
    return [AccuracyStats(v, "size", d, 20, k, 0) for v, k in (("mcpc", 15), ("rn", 9))
            for d in ((), ("number",))]


def test_chance_level_for_four_choices():
    spec = accuracy_figure(_stats())
    assert spec.chance == 0.25
    assert spec.categories == ["size:-", "size:number"]
    assert spec.series["mcpc"] == [0.75, 0.75]


def test_svg_is_deterministic(tmp_path):
    render_figure(accuracy_figure(_stats()), tmp_path / "a.svg")
    render_figure(accuracy_figure(_stats()), tmp_path / "b.svg")
    a = (tmp_path / "a.svg").read_bytes()
    assert a == (tmp_path / "b.svg").read_bytes()
    assert not re.search(rb"<dc:date>", a)


def test_chance_line_drawn_at_quarter(tmp_path):
    import matplotlib.pyplot as plt
    from sce import plotting
    fig = plotting._bars(accuracy_figure(_stats()))
    ys = [tuple(line.get_ydata()) for line in fig.axes[0].get_lines() if line.get_label() == "chance"]
    plt.close(fig)
    assert ys == [(0.25, 0.25)]


def test_line_figure(tmp_path):
    render_figure(FigureSpec("line", {"s": [0.0, 1.0, 0.5]}, markers=[1.0]), tmp_path / "l.svg")
    assert (tmp_path / "l.svg").stat().st_size > 0
    with pytest.raises(ValueError):
        FigureSpec("pie", {})
