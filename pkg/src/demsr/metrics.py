"""RMSE / PSNR evaluation and signed-error rasters."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .raster_io import DemTile, write_asc

DEFAULT_CLIP = 2.0


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred.heights if isinstance(pred, DemTile) else pred, dtype=np.float64)
    t = np.asarray(truth.heights if isinstance(truth, DemTile) else truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: prediction {p.shape} vs truth {t.shape}")
    for tile in (pred, truth):
        if isinstance(tile, DemTile) and tile.has_nodata:
            raise ValueError("metrics are undefined on nodata cells")
    return p, t


def mse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean((p - t) ** 2))


def rmse(pred, truth) -> float:
    return math.sqrt(mse(pred, truth))


def psnr_from_mse(mse_value: float, peak: float) -> float:
    if not peak > 0:
        raise ValueError(f"PSNR peak must be positive, got {peak}")
    if mse_value == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse_value)


def psnr(pred, truth, peak: float) -> float:
    """10 log10(peak^2 / MSE) in dB; ``inf`` for a perfect prediction."""
    return psnr_from_mse(mse(pred, truth), peak)


@dataclass
class EvalResult:
    region: str
    rmse: float
    psnr: float
    pixels: int
    peak: float
    method: str = ""

    def to_json(self) -> dict:
        d = asdict(self)
        # JSON has no infinity literal
        if math.isinf(d["psnr"]):
            d["psnr"] = "inf"
        return d


def evaluate_region(pred_tiles, truth_tiles, region: str = "", method: str = "") -> EvalResult:
    """Pool squared errors over every pixel of a region.

    The PSNR peak is the elevation range of the region's ground truth.
    """
    pred_tiles, truth_tiles = list(pred_tiles), list(truth_tiles)
    if not truth_tiles or len(pred_tiles) != len(truth_tiles):
        raise ValueError(
            f"need equally many prediction and truth tiles, got {len(pred_tiles)} and {len(truth_tiles)}"
        )
    sq_sum, count = 0.0, 0
    lo, hi = math.inf, -math.inf
    for pred, truth in zip(pred_tiles, truth_tiles):
        p, t = _pair(pred, truth)
        sq_sum += float(np.sum((p - t) ** 2))
        count += t.size
        lo, hi = min(lo, float(t.min())), max(hi, float(t.max()))
    region_mse = sq_sum / count
    peak = hi - lo
    value = psnr_from_mse(region_mse, peak) if peak > 0 else math.nan
    return EvalResult(region=region, rmse=math.sqrt(region_mse), psnr=value,
                      pixels=count, peak=peak, method=method)


def error_colors(err: np.ndarray, clip: float = DEFAULT_CLIP) -> np.ndarray:
    """Map signed errors to RGB: white at 0, red below truth, blue above."""
    if not clip > 0:
        raise ValueError(f"clip must be positive, got {clip}")
    err = np.asarray(err, dtype=np.float64)
    fade = np.floor(255.0 * (1.0 - np.minimum(np.abs(err) / clip, 1.0))).astype(np.uint8)
    rgb = np.full(err.shape + (3,), 255, dtype=np.uint8)
    neg, pos = err < 0, err > 0
    rgb[..., 1] = fade
    rgb[..., 2] = np.where(neg, fade, 255)
    rgb[..., 0] = np.where(pos, fade, 255)
    return rgb


def write_ppm(rgb: np.ndarray, path) -> None:
    rows, cols, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def error_raster(pred: DemTile, truth: DemTile, path, clip: float = DEFAULT_CLIP) -> tuple[Path, Path]:
    """Write prediction minus truth as ``<path>.asc`` and a colour ``<path>.ppm``."""
    p, t = _pair(pred, truth)
    err = p - t
    base = Path(path)
    if base.suffix.lower() in (".asc", ".ppm"):
        base = base.with_suffix("")
    asc_path, ppm_path = base.with_suffix(".asc"), base.with_suffix(".ppm")
    write_asc(truth.with_heights(err.astype(np.float32)), asc_path)
    write_ppm(error_colors(err, clip), ppm_path)
    return asc_path, ppm_path


def format_table(results: list[EvalResult]) -> str:
    """Plain-text table with a PSNR block and an RMSE block, one column per method."""
    methods = list(dict.fromkeys(r.method for r in results))
    regions = list(dict.fromkeys(r.region for r in results))
    by_key = {(r.region, r.method): r for r in results}
    head = ["Region"] + [f"PSNR {m}".strip() for m in methods] + [f"RMSE {m}".strip() for m in methods]
    rows = []
    for region in regions:
        row = [region]
        for m in methods:
            r = by_key.get((region, m))
            row.append("-" if r is None else f"{r.psnr:.3f}")
        for m in methods:
            r = by_key.get((region, m))
            row.append("-" if r is None else f"{r.rmse:.3f}")
        rows.append(row)
    widths = [max(len(str(c)) for c in col) for col in zip(head, *rows)]

    def fmt(cells):
        return "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths)))

    lines = [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def write_report(results: list[EvalResult], path) -> None:
    path = Path(path)
    path.write_text(json.dumps([r.to_json() for r in results], indent=2) + "\n", encoding="utf-8")
