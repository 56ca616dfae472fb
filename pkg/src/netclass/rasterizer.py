"""Grid-binning of 2D point clouds into grayscale images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NUDGE = 1e-9


@dataclass(eq=False)
class GrayImage:
    """``pixels[row, col]``: rows follow the y axis, columns the x axis."""

    pixels: np.ndarray
    raw_counts: np.ndarray
    bounds: tuple[float, float, float, float]
    point_bins: np.ndarray | None = None  # (n, 2) of (row, col) per input point

    @property
    def grid(self) -> int:
        return self.pixels.shape[0]


def _axis_bins(v: np.ndarray, grid: int) -> tuple[np.ndarray, float, float]:
    lo, mx = float(v.min()), float(v.max())
    if mx == lo:
        return np.zeros(v.shape[0], dtype=np.int64), lo, mx
    hi = mx + NUDGE * (mx - lo)
    width = (hi - lo) / grid
    if not width > 0.0:  # extent below float resolution
        return np.zeros(v.shape[0], dtype=np.int64), lo, mx
    idx = np.floor((v - lo) / width).astype(np.int64)
    return np.clip(idx, 0, grid - 1), lo, hi


def rasterize(points, grid: int = 48, scale: str = "max") -> GrayImage:
    """Count points per cell of a ``grid x grid`` lattice over their bounding box.

    Each axis is binned independently with half-open bins; the upper bound is
    pushed out by ``NUDGE`` of the extent so the maximum lands in the last bin.
    An axis with zero extent collapses into bin 0.  Pixels are the counts
    divided by the maximum count (``scale='max'``) or ``log1p`` of both
    (``scale='log'``).
    """
    pts = np.asarray(getattr(points, "coords", points), dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) array, got shape {pts.shape}")
    if pts.shape[0] == 0:
        raise ValueError("cannot rasterize an empty point set")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinate in point set")
    if grid < 2:
        raise ValueError("grid must be >= 2")
    col, x0, x1 = _axis_bins(pts[:, 0], grid)
    row, y0, y1 = _axis_bins(pts[:, 1], grid)
    counts = np.zeros((grid, grid), dtype=np.int64)
    np.add.at(counts, (row, col), 1)
    top = counts.max()
    if scale == "max":
        pixels = counts / top
    elif scale == "log":
        pixels = np.log1p(counts) / np.log1p(top)
    else:
        raise ValueError(f"unknown scale {scale!r}")
    return GrayImage(pixels, counts, (x0, x1, y0, y1), np.stack([row, col], axis=1))


def write_pgm(image: GrayImage | np.ndarray, path, binary: bool = True) -> None:
    """8-bit PGM (P5, or P2 when ``binary`` is False) with ``round(255 * pixel)``."""
    px = np.asarray(getattr(image, "pixels", image), dtype=np.float64)
    q = np.clip(np.rint(255.0 * px), 0, 255).astype(np.uint8)
    h, w = q.shape
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(q.tobytes())
    else:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"P2\n{w} {h}\n255\n")
            for r in q:
                fh.write(" ".join(map(str, r.tolist())) + "\n")


def read_pgm(path) -> np.ndarray:
    """Read a P2/P5 file back into a float array in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end].decode("ascii"))
        pos = end
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == "P5":
        arr = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8).reshape(h, w)
    elif magic == "P2":
        arr = np.array(data[pos:].split(), dtype=np.int64).reshape(h, w)
    else:
        raise ValueError(f"{path}: not a PGM file ({magic})")
    return arr.astype(np.float64) / maxval
