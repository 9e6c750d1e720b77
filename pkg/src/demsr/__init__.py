"""Super-resolution of digital elevation models with a feedback CNN."""

from .raster_io import DemTile, read_asc, read_bin, write_asc, write_bin

__version__ = "0.1.0"

__all__ = ["DemTile", "read_asc", "read_bin", "write_asc", "write_bin"]
