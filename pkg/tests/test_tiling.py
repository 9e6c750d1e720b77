import numpy as np
import pytest
import torch

from demsr.network import ModelConfig, build, predict
from demsr.raster_io import DemTile
from demsr.tiling import default_overlap, plan_patches, super_resolve
from stubs import ConstantPerCall


def _axis(plan, which):
    return sorted({p[which] for p in plan.positions})


def test_plan_single_patch():
    assert plan_patches(200, 200, 200).positions == ((0, 0),)


def test_plan_quarter_overlap():
    plan = plan_patches(400, 400, 200, 50)
    assert plan.stride == 100
    assert _axis(plan, 0) == _axis(plan, 1) == [0, 100, 200]


def test_plan_exact_tiling():
    plan = plan_patches(400, 400, 200, 0)
    assert _axis(plan, 0) == [0, 200]


def test_plan_clamps_last_position():
    plan = plan_patches(250, 330, 100, 25)
    assert _axis(plan, 0) == [0, 50, 100, 150]
    assert _axis(plan, 1) == [0, 50, 100, 150, 200, 230]


def test_default_overlap_quarter():
    assert default_overlap(200) == 50
    assert default_overlap(30) == 7


@pytest.mark.parametrize("args", [(100, 100, 101, 0), (100, 100, 40, 20), (100, 100, 40, -1), (10, 10, 0, 0)])
def test_plan_rejects(args):
    with pytest.raises(ValueError):
        plan_patches(*args)


@pytest.mark.parametrize("rows,cols,patch,overlap", [(37, 53, 16, 4), (64, 64, 20, 0), (30, 31, 30, 7)])
def test_plan_covers_grid(rows, cols, patch, overlap):
    plan = plan_patches(rows, cols, patch, overlap)
    hits = np.zeros((rows, cols), int)
    for r, c in plan.positions:
        hits[r:r + patch, c:c + patch] += 1
    assert hits.min() >= 1


def _tile(rng, n=48):
    return DemTile(rng.uniform(500, 600, (n, n)).astype(np.float32))


def test_one_patch_equals_whole_tile(rng):
    net = build(ModelConfig(m=4, n=2, T=2), seed=0)
    tile = _tile(rng, 24)
    out = super_resolve(net, tile, plan_patches(24, 24, 24))
    assert np.array_equal(out.heights, predict(net, tile.heights).astype(np.float32))


def test_zero_overlap_matches_independent_patches(rng):
    net = build(ModelConfig(m=4, n=2, T=2), seed=0)
    tile = _tile(rng, 48)
    got = super_resolve(net, tile, plan_patches(48, 48, 16, 0), "mean")
    expected = np.zeros((48, 48), np.float32)
    for r in range(0, 48, 16):
        for c in range(0, 48, 16):
            expected[r:r + 16, c:c + 16] = predict(net, tile.heights[r:r + 16, c:c + 16], "mean")
    assert np.array_equal(got.heights, expected)


def test_constant_stub_same_for_any_plan(rng):
    tile = _tile(rng, 40)
    a = super_resolve(ConstantPerCall([7.5]), tile, plan_patches(40, 40, 20, 0))
    b = super_resolve(ConstantPerCall([7.5]), tile, plan_patches(40, 40, 20, 5))
    assert np.all(a.heights == 7.5) and np.array_equal(a.heights, b.heights)


def test_overlap_pixels_average(rng):
    # two patches along columns: [0, 20) and [10, 30)
    tile = DemTile(rng.uniform(500, 600, (20, 30)).astype(np.float32))
    plan = plan_patches(20, 30, 20, 5)
    assert plan.positions == ((0, 0), (0, 10))
    out = super_resolve(ConstantPerCall([1.0, 3.0]), tile, plan).heights
    assert np.all(out[:, :10] == 1.0)
    assert np.all(out[:, 10:20] == 2.0)
    assert np.all(out[:, 20:] == 3.0)


def test_plan_grid_mismatch(rng):
    with pytest.raises(ValueError):
        super_resolve(ConstantPerCall([1.0]), _tile(rng, 40), plan_patches(41, 40, 20))


def test_bit_reproducible(rng):
    net = build(ModelConfig(m=4, n=2, T=2), seed=0)
    tile = _tile(rng, 40)
    plan = plan_patches(40, 40, 16, 4)
    assert super_resolve(net, tile, plan) == super_resolve(net, tile, plan)


def test_georeferencing_kept(rng):
    tile = DemTile(rng.uniform(500, 600, (20, 20)).astype(np.float32), cellsize=2.0, origin_x=10, origin_y=20)
    out = super_resolve(ConstantPerCall([550.0]), tile, plan_patches(20, 20, 10))
    assert (out.cellsize, out.origin_x, out.origin_y) == (2.0, 10.0, 20.0)
