"""Bicubic resampling and LR/HR training-pair datasets."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .raster_io import DemTile, read_bin, read_tile, write_bin

KEYS_A = -0.5
SPLIT_NAMES = ("train", "val", "test")


def keys_kernel(x: np.ndarray, a: float = KEYS_A) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2 = x * x
    x3 = x2 * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """(out_size, in_size) interpolation matrix for one axis.

    Pixel centres are aligned (half-pixel convention). When shrinking, the
    kernel is stretched by the reduction factor so it integrates over the
    source footprint. Taps falling outside the grid use the border sample.
    """
    ratio = in_size / out_size
    support = max(ratio, 1.0)
    radius = 2.0 * support
    w = np.zeros((out_size, in_size), dtype=np.float64)
    for i in range(out_size):
        center = (i + 0.5) * ratio - 0.5
        lo = math.floor(center - radius) + 1
        hi = math.ceil(center + radius) - 1
        taps = np.arange(lo, hi + 1)
        weights = keys_kernel((taps - center) / support)
        weights /= weights.sum()
        np.add.at(w[i], np.clip(taps, 0, in_size - 1), weights)
    return w


def bicubic_resize(grid, out_rows: int, out_cols: int) -> np.ndarray:
    """Resize a 2-D grid with the Keys cubic kernel (a = -0.5).

    Computation runs in float64; the result keeps the input's float dtype.
    """
    g = np.asarray(grid)
    if g.ndim != 2:
        raise ValueError(f"expected a 2-D grid, got shape {g.shape}")
    if g.shape[0] < 2 or g.shape[1] < 2:
        raise ValueError(f"grid must be at least 2x2, got {g.shape}")
    if out_rows < 1 or out_cols < 1:
        raise ValueError(f"output size must be positive, got {out_rows}x{out_cols}")
    if not np.all(np.isfinite(g)):
        raise ValueError("grid contains non-finite values")
    out_dtype = g.dtype if np.issubdtype(g.dtype, np.floating) else np.float64
    g64 = g.astype(np.float64)
    if (out_rows, out_cols) == g.shape:
        return g64.astype(out_dtype)
    wr = resize_matrix(g.shape[0], out_rows)
    wc = resize_matrix(g.shape[1], out_cols)
    # interpolate offsets from one sample: keeps flat grids exact and limits cancellation
    ref = g64[0, 0]
    return (ref + wr @ (g64 - ref) @ wc.T).astype(out_dtype)


def _require_no_voids(tile: DemTile):
    if tile.has_nodata:
        raise ValueError("tile contains nodata cells; fill voids before resampling")


def resize_tile(tile: DemTile, out_rows: int, out_cols: int) -> DemTile:
    """Resample a tile onto a new grid covering the same extent."""
    _require_no_voids(tile)
    heights = bicubic_resize(tile.heights, out_rows, out_cols)
    # cell size follows the row axis; extents agree exactly for integer factors
    return tile.with_heights(heights, cellsize=tile.cellsize * tile.rows / out_rows)


@dataclass
class TrainPair:
    lr: DemTile
    ilr: DemTile
    hr: DemTile
    id: str = ""


def upsample(lr: DemTile, out_rows: int, out_cols: int) -> DemTile:
    """The ILR grid: ``lr`` bicubically upsampled to the HR grid size."""
    return resize_tile(lr, out_rows, out_cols)


def make_pair(hr: DemTile, scale: int, pair_id: str = "") -> TrainPair:
    if scale < 1:
        raise ValueError(f"scale must be a positive integer, got {scale}")
    _require_no_voids(hr)
    lr_rows, lr_cols = math.ceil(hr.rows / scale), math.ceil(hr.cols / scale)
    if min(lr_rows, lr_cols) < 2:
        raise ValueError(
            f"HR tile {hr.rows}x{hr.cols} is too small for scale {scale}: LR would be {lr_rows}x{lr_cols}, need 2x2"
        )
    lr = hr.with_heights(
        bicubic_resize(hr.heights, lr_rows, lr_cols), cellsize=hr.cellsize * scale
    )
    ilr = hr.with_heights(bicubic_resize(lr.heights, hr.rows, hr.cols))
    return TrainPair(lr=lr, ilr=ilr, hr=hr, id=pair_id)


@dataclass
class ManifestEntry:
    id: str
    lr: Path
    hr: Path


@dataclass
class DatasetManifest:
    split: str
    scale: int
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def load_pair(self, entry: ManifestEntry) -> TrainPair:
        lr = read_bin(entry.lr)
        hr = read_bin(entry.hr)
        return TrainPair(lr=lr, ilr=upsample(lr, hr.rows, hr.cols), hr=hr, id=entry.id)

    def load_pairs(self) -> list[TrainPair]:
        return [self.load_pair(e) for e in self.entries]

    def write(self, path) -> None:
        path = Path(path)
        base = path.parent
        lines = [json.dumps({"scale": self.scale, "split": self.split})]
        for e in self.entries:
            lines.append(json.dumps({
                "id": e.id,
                "lr": _relpath(e.lr, base),
                "hr": _relpath(e.hr, base),
            }))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _relpath(p: Path, base: Path) -> str:
    try:
        return Path(p).resolve().relative_to(base.resolve()).as_posix()
    except ValueError:
        return Path(p).resolve().as_posix()


def load_manifest(path) -> DatasetManifest:
    """Read a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    try:
        header = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON: {exc}") from None
    if set(header) != {"scale", "split"}:
        raise ValueError(f"{path}: header must hold exactly 'scale' and 'split', got {sorted(header)}")
    manifest = DatasetManifest(split=header["split"], scale=int(header["scale"]))
    seen = set()
    for rec in records:
        if set(rec) != {"id", "lr", "hr"}:
            raise ValueError(f"{path}: entry must hold 'id', 'lr', 'hr', got {sorted(rec)}")
        if rec["id"] in seen:
            raise ValueError(f"{path}: duplicate id {rec['id']!r}")
        seen.add(rec["id"])
        lr, hr = path.parent / rec["lr"], path.parent / rec["hr"]
        for p in (lr, hr):
            if not p.is_file():
                raise FileNotFoundError(f"{path}: entry {rec['id']!r} references missing file {p}")
        manifest.entries.append(ManifestEntry(rec["id"], lr, hr))
    return manifest


def _split_counts(n: int, ratios) -> list[int]:
    cum = np.cumsum(ratios)
    bounds = [0] + [int(round(c * n)) for c in cum]
    bounds[-1] = n
    return [b - a for a, b in zip(bounds, bounds[1:])]


def build_manifest(hr_dir, ratios, scale: int, seed: int, out_dir, threads: int = 1) -> dict[str, DatasetManifest]:
    """Pair every HR tile in ``hr_dir`` with its LR version and split them.

    Tiles are shuffled with a seeded generator, split by ``ratios`` (train,
    val[, test]), written as DEM1 files under ``out_dir/pairs`` and listed in
    ``out_dir/<split>.jsonl``. Returns the manifests keyed by split name.
    """
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    ratios = [float(r) for r in ratios]
    if not 1 <= len(ratios) <= len(SPLIT_NAMES):
        raise ValueError(f"expected 1 to {len(SPLIT_NAMES)} split ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    if not hr_dir.is_dir():
        raise FileNotFoundError(f"HR directory not found: {hr_dir}")

    files = sorted(p for p in hr_dir.iterdir() if p.suffix.lower() in (".asc", ".bin") and p.is_file())
    if not files:
        raise ValueError(f"no .asc or .bin tiles in {hr_dir}")
    ids = [p.stem for p in files]
    if len(set(ids)) != len(ids):
        raise ValueError(f"tile ids in {hr_dir} are not unique (same stem with two extensions?)")

    rng = np.random.Generator(np.random.Philox(key=seed))
    order = rng.permutation(len(files))
    pair_dir = out_dir / "pairs"
    pair_dir.mkdir(parents=True, exist_ok=True)

    def materialize(path: Path) -> ManifestEntry:
        pair = make_pair(read_tile(path), scale, path.stem)
        lr_path = pair_dir / f"{path.stem}_lr.bin"
        hr_path = pair_dir / f"{path.stem}_hr.bin"
        write_bin(pair.lr, lr_path)
        write_bin(pair.hr, hr_path)
        return ManifestEntry(path.stem, lr_path, hr_path)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        entries = list(pool.map(materialize, files))

    manifests = {}
    start = 0
    for name, count in zip(SPLIT_NAMES, _split_counts(len(files), ratios)):
        chosen = sorted((entries[i] for i in order[start:start + count]), key=lambda e: e.id)
        start += count
        manifest = DatasetManifest(split=name, scale=scale, entries=chosen)
        manifest.write(out_dir / f"{name}.jsonl")
        manifests[name] = manifest
    return manifests
