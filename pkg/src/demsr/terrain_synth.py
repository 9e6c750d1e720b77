"""Seeded diamond-square terrains and fixed-size cropping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .raster_io import DemTile, axis_positions, subtile

SYNTH_CELLSIZE = 2.0


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one diamond-square run.

    ``corner_heights`` are ordered north-west, north-east, south-west,
    south-east. ``roughness`` is the offset amplitude at the coarsest level;
    each finer level multiplies it by ``decay``.
    """

    k: int
    seed: int = 0
    roughness: float = 10.0
    decay: float = 0.5
    corner_heights: tuple[float, float, float, float] = (1000.0, 1000.0, 1000.0, 1000.0)

    def __post_init__(self):
        if not isinstance(self.k, (int, np.integer)) or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not self.roughness >= 0:
            raise ValueError(f"roughness must be >= 0, got {self.roughness}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"decay must lie in (0, 1], got {self.decay}")
        if len(self.corner_heights) != 4:
            raise ValueError("corner_heights needs exactly 4 values")

    @property
    def side(self) -> int:
        return 2**self.k + 1


def _mirror(idx: np.ndarray, n: int) -> np.ndarray:
    last = n - 1
    idx = np.abs(idx)
    return np.where(idx > last, 2 * last - idx, idx)


def diamond_square(spec: SynthSpec, level_increments: list | None = None) -> DemTile:
    """Generate a (2^k+1)^2 fractal terrain.

    If ``level_increments`` is a list, the mean absolute random offset of
    every subdivision level is appended to it.
    """
    n = spec.side
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    h = np.zeros((n, n), dtype=np.float64)
    nw, ne, sw, se = (float(c) for c in spec.corner_heights)
    h[0, 0], h[0, -1], h[-1, 0], h[-1, -1] = nw, ne, sw, se

    amp = float(spec.roughness)
    step = n - 1
    while step > 1:
        half = step // 2

        # diamond: cell centres from their four corners
        c = np.arange(half, n, step)
        rr, cc = np.meshgrid(c, c, indexing="ij")
        avg = 0.25 * (
            h[rr - half, cc - half] + h[rr - half, cc + half]
            + h[rr + half, cc - half] + h[rr + half, cc + half]
        )
        d_off = rng.uniform(-amp, amp, size=avg.shape)
        h[rr, cc] = avg + d_off

        # square: edge midpoints from their four neighbours, mirrored at borders
        on = np.arange(0, n, step)
        r1, c1 = np.meshgrid(on, c, indexing="ij")
        r2, c2 = np.meshgrid(c, on, indexing="ij")
        sr = np.concatenate([r1.ravel(), r2.ravel()])
        sc = np.concatenate([c1.ravel(), c2.ravel()])
        avg = 0.25 * (
            h[_mirror(sr - half, n), sc] + h[_mirror(sr + half, n), sc]
            + h[sr, _mirror(sc - half, n)] + h[sr, _mirror(sc + half, n)]
        )
        s_off = rng.uniform(-amp, amp, size=avg.shape)
        h[sr, sc] = avg + s_off

        if level_increments is not None:
            level_increments.append(float(np.mean(np.abs(np.concatenate([d_off.ravel(), s_off])))))
        amp *= spec.decay
        step = half

    return DemTile(h.astype(np.float32), cellsize=SYNTH_CELLSIZE)


def crop_tiles(tile: DemTile, size: int, stride: int) -> list[DemTile]:
    """All ``size`` x ``size`` windows on a ``stride`` grid, clamped to reach the far edges."""
    if size < 1:
        raise ValueError(f"crop size must be positive, got {size}")
    if size > min(tile.rows, tile.cols):
        raise ValueError(f"crop size {size} exceeds tile extent {tile.rows}x{tile.cols}")
    rows = axis_positions(tile.rows, size, stride)
    cols = axis_positions(tile.cols, size, stride)
    return [subtile(tile, r, c, size, size) for r in rows for c in cols]
