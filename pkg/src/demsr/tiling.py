"""Patch-wise inference over large grids, with optional overlap averaging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import predict
from .raster_io import DemTile, axis_positions


@dataclass(frozen=True)
class PatchPlan:
    rows: int
    cols: int
    patch_size: int
    overlap: int
    positions: tuple[tuple[int, int], ...]

    @property
    def stride(self) -> int:
        return self.patch_size - 2 * self.overlap


def default_overlap(patch_size: int) -> int:
    """A quarter of the patch on each side."""
    return patch_size // 4


def plan_patches(rows: int, cols: int, patch_size: int, overlap: int = 0) -> PatchPlan:
    if patch_size < 1:
        raise ValueError(f"patch size must be positive, got {patch_size}")
    if patch_size > min(rows, cols):
        raise ValueError(f"patch size {patch_size} exceeds grid {rows}x{cols}")
    if overlap < 0 or 2 * overlap >= patch_size:
        raise ValueError(f"overlap must satisfy 0 <= 2*overlap < patch size, got {overlap} for {patch_size}")
    stride = patch_size - 2 * overlap
    rs = axis_positions(rows, patch_size, stride)
    cs = axis_positions(cols, patch_size, stride)
    return PatchPlan(rows, cols, patch_size, overlap, tuple((r, c) for r in rs for c in cs))


def super_resolve(net, ilr: DemTile, plan: PatchPlan, ensemble_mode: str = "last") -> DemTile:
    """Forward every planned patch and average predictions where patches overlap.

    ``net`` is anything ``predict`` accepts: a module returning SR outputs for
    an (N, 1, H, W) tensor.
    """
    if (plan.rows, plan.cols) != ilr.shape:
        raise ValueError(f"patch plan is for a {plan.rows}x{plan.cols} grid, tile is {ilr.rows}x{ilr.cols}")
    if ilr.has_nodata:
        raise ValueError("tile contains nodata cells; fill voids before inference")
    acc = np.zeros(ilr.shape, dtype=np.float64)
    hits = np.zeros(ilr.shape, dtype=np.int64)
    p = plan.patch_size
    for r, c in plan.positions:
        out = predict(net, ilr.heights[r:r + p, c:c + p], ensemble_mode)
        acc[r:r + p, c:c + p] += out
        hits[r:r + p, c:c + p] += 1
    assert hits.min() >= 1, "patch plan leaves pixels uncovered"
    return ilr.with_heights((acc / hits).astype(np.float32))
