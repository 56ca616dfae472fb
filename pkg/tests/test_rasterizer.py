import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from netclass.rasterizer import rasterize, read_pgm, write_pgm

from oracles import histogram_direct


def test_coincident_points():
    img = rasterize(np.zeros((1000, 2)))
    assert img.raw_counts.sum() == 1000
    assert img.pixels.max() == 1.0
    assert np.count_nonzero(img.pixels) == 1


def test_square_corners():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    img = rasterize(pts, grid=2)
    assert img.raw_counts.tolist() == [[1, 1], [1, 1]]
    assert np.all(img.pixels == 1.0)


def test_uniform_cloud_against_direct_histogram():
    pts = np.random.default_rng(0).random((5000, 2))
    img = rasterize(pts, grid=48)
    assert img.raw_counts.sum() == 5000
    np.testing.assert_array_equal(img.raw_counts, histogram_direct(pts, 48))
    lo = math.ceil(5000 / 48 ** 2)
    assert lo <= img.raw_counts.max() <= 3 * lo


def test_bounds_and_orientation():
    pts = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 2.0]])
    img = rasterize(pts, grid=4)
    assert img.bounds[0] == 0.0 and img.bounds[1] > 10.0
    assert img.raw_counts[0, 0] == 1   # origin
    assert img.raw_counts[0, 3] == 1   # max x -> last column
    assert img.raw_counts[3, 0] == 1   # max y -> last row
    assert img.point_bins.tolist() == [[0, 0], [0, 3], [3, 0]]


def test_log_scale():
    pts = np.array([[0.0, 0.0]] * 3 + [[1.0, 1.0]])
    img = rasterize(pts, grid=2, scale="log")
    assert img.pixels[0, 0] == 1.0
    assert img.pixels[1, 1] == pytest.approx(math.log(2) / math.log(4))


@pytest.mark.parametrize("bad", [np.zeros((0, 2)), np.array([[0.0, np.nan]]), np.zeros((3, 3))])
def test_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        rasterize(bad)


def test_pgm_roundtrip(tmp_path):
    img = rasterize(np.random.default_rng(1).normal(size=(300, 2)), grid=16)
    for binary in (True, False):
        p = tmp_path / f"x{binary}.pgm"
        write_pgm(img, p, binary=binary)
        back = read_pgm(p)
        np.testing.assert_array_equal(np.rint(back * 255), np.rint(img.pixels * 255))
    assert (tmp_path / "xTrue.pgm").read_bytes().startswith(b"P5\n16 16\n255\n")
    assert (tmp_path / "xFalse.pgm").read_text().startswith("P2\n16 16\n255\n")


point_clouds = arrays(np.float64, st.tuples(st.integers(1, 200), st.just(2)),
                      elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False))


@settings(max_examples=1000, deadline=None)
@given(point_clouds, st.integers(2, 64))
def test_mass_conservation(pts, grid):
    img = rasterize(pts, grid)
    assert img.raw_counts.sum() == pts.shape[0]
    assert img.pixels.shape == (grid, grid)
    assert img.pixels.max() == 1.0 and img.pixels.min() >= 0.0


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 300), st.floats(0.01, 100.0), st.floats(-50.0, 50.0),
       st.floats(-50.0, 50.0))
def test_affine_invariance(seed, n, a, bx, by):
    pts = np.random.default_rng(seed).normal(size=(n, 2))
    base = rasterize(pts)
    moved = rasterize(a * pts + np.array([bx, by]))
    np.testing.assert_array_equal(base.raw_counts, moved.raw_counts)
    np.testing.assert_array_equal(base.pixels, moved.pixels)
