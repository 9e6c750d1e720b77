"""DEM tile container and the two on-disk formats (ESRI ASCII grid, DEM1 binary)."""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MIN_HEIGHT = -500.0
MAX_HEIGHT = 9000.0
DEFAULT_NODATA = -9999.0

DEM1_MAGIC = b"DEM1"
_DEM1_HEADER = struct.Struct("<4sIIdddf")

_ASC_REQUIRED = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize")
_ASC_KEYS = _ASC_REQUIRED + ("nodata_value",)


class RasterFormatError(ValueError):
    """A raster file could not be decoded."""


class AscParseError(RasterFormatError):
    pass


class Dem1FormatError(RasterFormatError):
    pass


@dataclass(eq=False)
class DemTile:
    """Georeferenced elevation grid.

    ``heights`` is a float32 array of shape (rows, cols) with row 0 the
    northernmost row. ``origin_x``/``origin_y`` locate the lower-left corner.
    """

    heights: np.ndarray
    cellsize: float = 2.0
    origin_x: float = 0.0
    origin_y: float = 0.0
    nodata_value: float = DEFAULT_NODATA

    def __post_init__(self):
        h = np.asarray(self.heights)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise ValueError(f"heights must be a non-empty 2-D grid, got shape {h.shape}")
        self.heights = np.ascontiguousarray(h, dtype=np.float32)
        self.cellsize = float(self.cellsize)
        if not self.cellsize > 0:
            raise ValueError(f"cellsize must be positive, got {self.cellsize}")
        self.origin_x = float(self.origin_x)
        self.origin_y = float(self.origin_y)
        # stored at f32 precision so both formats carry it exactly
        self.nodata_value = float(np.float32(self.nodata_value))
        self._check_heights()

    def _check_heights(self):
        h = self.heights
        if not np.all(np.isfinite(h)):
            raise ValueError("heights contain non-finite values")
        valid = h[h != np.float32(self.nodata_value)]
        if valid.size and (valid.min() < MIN_HEIGHT or valid.max() > MAX_HEIGHT):
            raise ValueError(
                f"heights outside [{MIN_HEIGHT}, {MAX_HEIGHT}] m: "
                f"range [{valid.min()}, {valid.max()}]"
            )

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape

    @property
    def nodata_mask(self) -> np.ndarray:
        return self.heights == np.float32(self.nodata_value)

    @property
    def has_nodata(self) -> bool:
        return bool(self.nodata_mask.any())

    def with_heights(self, heights: np.ndarray, cellsize: float | None = None) -> DemTile:
        """Copy of this tile's georeferencing around a new grid."""
        return replace(
            self,
            heights=heights,
            cellsize=self.cellsize if cellsize is None else cellsize,
        )

    def __eq__(self, other):
        if not isinstance(other, DemTile):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.cellsize == other.cellsize
            and self.origin_x == other.origin_x
            and self.origin_y == other.origin_y
            and np.float32(self.nodata_value).tobytes() == np.float32(other.nodata_value).tobytes()
            and np.array_equal(self.heights.view(np.uint32), other.heights.view(np.uint32))
        )

    __hash__ = None


def format_f32(value) -> str:
    """Shortest decimal text that parses back to the same float32."""
    return np.format_float_positional(np.float32(value), unique=True, trim="-")


def _format_f64(value: float) -> str:
    text = repr(float(value))
    return text[:-2] if text.endswith(".0") else text


def read_asc(path) -> DemTile:
    path = Path(path)
    with open(path, "r", encoding="ascii", errors="strict") as fh:
        lines = fh.read().splitlines()

    header: dict[str, str] = {}
    lineno = 0
    while lineno < len(lines):
        parts = lines[lineno].split()
        if not parts:
            lineno += 1
            continue
        if not parts[0][0].isalpha() or parts[0].lower() in ("nan", "inf", "infinity"):
            break
        key = parts[0].lower()
        if key not in _ASC_KEYS:
            raise AscParseError(f"{path}:{lineno + 1}: unknown header key {parts[0]!r}")
        if len(parts) != 2:
            raise AscParseError(f"{path}:{lineno + 1}: header key {parts[0]!r} needs exactly one value")
        if key in header:
            raise AscParseError(f"{path}:{lineno + 1}: duplicate header key {parts[0]!r}")
        header[key] = parts[1]
        lineno += 1

    for key in _ASC_REQUIRED:
        if key not in header:
            raise AscParseError(f"{path}: missing header key {key!r}")

    def _number(key, kind):
        try:
            return kind(header[key])
        except ValueError:
            raise AscParseError(f"{path}: header key {key!r} has invalid value {header[key]!r}") from None

    ncols = _number("ncols", int)
    nrows = _number("nrows", int)
    if ncols < 1:
        raise AscParseError(f"{path}: header key 'ncols' must be positive, got {ncols}")
    if nrows < 1:
        raise AscParseError(f"{path}: header key 'nrows' must be positive, got {nrows}")
    xll = _number("xllcorner", float)
    yll = _number("yllcorner", float)
    cellsize = _number("cellsize", float)
    if not cellsize > 0:
        raise AscParseError(f"{path}: header key 'cellsize' must be positive, got {cellsize}")
    nodata = _number("nodata_value", float) if "nodata_value" in header else DEFAULT_NODATA

    values = []
    for ln in range(lineno, len(lines)):
        for col, token in enumerate(lines[ln].split()):
            try:
                values.append(float(token))
            except ValueError:
                raise AscParseError(
                    f"{path}:{ln + 1}: non-numeric token {token!r} "
                    f"(data token {len(values) + 1}, field {col + 1} on the line)"
                ) from None

    expected = nrows * ncols
    if len(values) != expected:
        raise AscParseError(
            f"{path}: expected {expected} values ({nrows} rows x {ncols} cols), found {len(values)}"
        )
    heights = np.array(values, dtype=np.float32).reshape(nrows, ncols)
    try:
        return DemTile(heights, cellsize=cellsize, origin_x=xll, origin_y=yll, nodata_value=nodata)
    except ValueError as exc:
        raise AscParseError(f"{path}: {exc}") from None


def write_asc(tile: DemTile, path) -> None:
    nodata_text = format_f32(tile.nodata_value)
    out = [
        f"ncols {tile.cols}",
        f"nrows {tile.rows}",
        f"xllcorner {_format_f64(tile.origin_x)}",
        f"yllcorner {_format_f64(tile.origin_y)}",
        f"cellsize {_format_f64(tile.cellsize)}",
        f"NODATA_value {nodata_text}",
    ]
    # cache token text: DEM grids repeat values heavily
    cache: dict[int, str] = {}
    bits = tile.heights.view(np.uint32)
    for row_vals, row_bits in zip(tile.heights, bits):
        tokens = []
        for v, b in zip(row_vals, row_bits):
            b = int(b)
            text = cache.get(b)
            if text is None:
                text = cache[b] = format_f32(v)
            tokens.append(text)
        out.append(" ".join(tokens))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(out))
        fh.write("\n")


def read_bin(path) -> DemTile:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != DEM1_MAGIC:
        raise Dem1FormatError(f"{path}: bad magic {data[:4]!r}, expected {DEM1_MAGIC!r}")
    if len(data) < _DEM1_HEADER.size:
        raise Dem1FormatError(f"{path}: truncated header ({len(data)} bytes)")
    _, rows, cols, cellsize, ox, oy, nodata = _DEM1_HEADER.unpack_from(data)
    payload = len(data) - _DEM1_HEADER.size
    expected = rows * cols * 4
    if payload < expected:
        raise Dem1FormatError(f"{path}: truncated payload, expected {expected} bytes, found {payload}")
    if payload > expected:
        raise Dem1FormatError(f"{path}: {payload - expected} trailing bytes after payload")
    heights = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=_DEM1_HEADER.size)
    try:
        return DemTile(
            heights.reshape(rows, cols).astype(np.float32),
            cellsize=cellsize,
            origin_x=ox,
            origin_y=oy,
            nodata_value=nodata,
        )
    except ValueError as exc:
        raise Dem1FormatError(f"{path}: {exc}") from None


def write_bin(tile: DemTile, path) -> None:
    header = _DEM1_HEADER.pack(
        DEM1_MAGIC, tile.rows, tile.cols, tile.cellsize, tile.origin_x, tile.origin_y, tile.nodata_value
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(tile.heights.astype("<f4", copy=False).tobytes())


def read_tile(path) -> DemTile:
    """Dispatch on extension: ``.asc`` or ``.bin``."""
    suffix = Path(path).suffix.lower()
    if suffix == ".asc":
        return read_asc(path)
    if suffix == ".bin":
        return read_bin(path)
    raise RasterFormatError(f"{path}: unsupported extension {suffix!r} (expected .asc or .bin)")


def write_tile(tile: DemTile, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".asc":
        write_asc(tile, path)
    elif suffix == ".bin":
        write_bin(tile, path)
    else:
        raise RasterFormatError(f"{path}: unsupported extension {suffix!r} (expected .asc or .bin)")


def axis_positions(extent: int, size: int, stride: int) -> list[int]:
    """Window starts along one axis at ``stride``, last start clamped to ``extent - size``."""
    if size > extent:
        raise ValueError(f"window size {size} exceeds extent {extent}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    last = extent - size
    positions = list(range(0, last + 1, stride))
    if positions[-1] != last:
        positions.append(last)
    return positions


def subtile(tile: DemTile, row: int, col: int, rows: int, cols: int) -> DemTile:
    """Window of ``tile`` with the lower-left origin moved to match."""
    return DemTile(
        tile.heights[row:row + rows, col:col + cols].copy(),
        cellsize=tile.cellsize,
        origin_x=tile.origin_x + col * tile.cellsize,
        origin_y=tile.origin_y + (tile.rows - (row + rows)) * tile.cellsize,
        nodata_value=tile.nodata_value,
    )
