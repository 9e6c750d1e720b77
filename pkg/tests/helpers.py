import numpy as np

from demsr.raster_io import DemTile


def random_tile(rng, rows, cols, lo=100.0, hi=900.0, **kw):
    return DemTile(rng.uniform(lo, hi, size=(rows, cols)).astype(np.float32), **kw)
