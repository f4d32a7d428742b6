import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sce.generator import FeatureVector, Shape
from sce.render import BACKGROUND, SHADE_TABLE, SIZE_TABLE, RenderConfig, draw_objects, read_image, render, write_pgm


def test_tables():
    assert SHADE_TABLE == (0, 42, 84, 126, 168, 210)
    assert SIZE_TABLE == (6, 8, 10, 12, 14, 16)
    assert all(a < b for a, b in zip(SHADE_TABLE, SHADE_TABLE[1:]))
    assert all(a < b for a, b in zip(SIZE_TABLE, SIZE_TABLE[1:]))


def test_single_object_in_center_cell(feature_vector):
    img = render(feature_vector(number=1, positions=(4, 0, 1, 2, 3, 5, 6, 7, 8)))
    assert img.shape == (64, 64) and img.dtype == np.uint8
    ys, xs = np.nonzero(img != BACKGROUND)
    # the middle cell spans [21.33, 42.67) on both axes
    assert ys.min() > 21 and ys.max() < 43
    assert xs.min() > 21 and xs.max() < 43
    # pixel i covers [i, i + 1), so its center sits at i + 0.5
    assert abs(xs.mean() + 0.5 - 32) < 0.25 and abs(ys.mean() + 0.5 - 32) < 0.25


@pytest.mark.parametrize("shape", list(Shape))
def test_shade_zero_interior_is_black(feature_vector, shape):
    img = render(feature_vector(shade_idx=0, shape=shape, size_idx=5, positions=(4, 0, 1, 2, 3, 5, 6, 7, 8)))
    assert img[32, 32] == 0
    assert img.min() == 0


def test_identical_vectors_render_identically(feature_vector):
    a = render(feature_vector(number=5, shade_idx=3, shape=Shape.STAR, size_idx=2))
    b = render(feature_vector(number=5, shade_idx=3, shape=Shape.STAR, size_idx=2))
    assert a.tobytes() == b.tobytes()


def test_interior_uses_shade_table(feature_vector):
    for idx, gray in enumerate(SHADE_TABLE):
        img = render(feature_vector(shade_idx=idx, shape=Shape.SQUARE, positions=(4, 0, 1, 2, 3, 5, 6, 7, 8)))
        assert img[32, 32] == gray


def test_size_orders_ink(feature_vector):
    ink = [int((render(feature_vector(size_idx=s)) != BACKGROUND).sum()) for s in range(6)]
    assert ink == sorted(ink) and len(set(ink)) == 6


def test_config_dimensions():
    img = draw_objects("circle", 10, 0, [0], RenderConfig(width=48, height=32))
    assert img.shape == (32, 48)


def test_pgm_roundtrip(tmp_path, feature_vector):
    img = render(feature_vector(number=7, shade_idx=2, shape=Shape.HEXAGON, size_idx=3))
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n64 64\n255\n")
    np.testing.assert_array_equal(read_image(tmp_path / "a.pgm"), img)


@settings(max_examples=30, deadline=None)
@given(number=st.integers(1, 9), shade=st.integers(0, 5), shape=st.sampled_from(list(Shape)),
       size=st.integers(0, 5), positions=st.permutations(range(9)))
def test_pixels_stay_between_shade_and_background(number, shade, shape, size, positions):
    img = render(FeatureVector(number, shade, shape, size, tuple(positions)))
    assert img.min() >= SHADE_TABLE[shade] and img.max() == BACKGROUND
    # objects never leak into cells that are not occupied
    occupied = set(positions[:number])
    for cell in set(range(9)) - occupied:
        r, c = divmod(cell, 3)
        block = img[int(r * 64 / 3) + 1:int((r + 1) * 64 / 3) - 1, int(c * 64 / 3) + 1:int((c + 1) * 64 / 3) - 1]
        assert (block == BACKGROUND).all()
