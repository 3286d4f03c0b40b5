# AnnuStitch — Adaptive Histogram Equalization
# Tile-wise (optionally contrast-limited) histogram equalization with bilinear blending of tile mappings.

import logging

import numpy as np

from annustitch.errors import StageError
from annustitch.schemas import AheParams

logger = logging.getLogger(__name__)


class EnhanceError(StageError):
    stage = "enhance"


class ImageTooSmall(EnhanceError):
    pass


def tile_bounds(length: int, tiles: int) -> list[tuple[int, int]]:
    """Equal tiles of length // tiles; the last tile absorbs the remainder."""
    size = length // tiles
    bounds = [(i * size, (i + 1) * size) for i in range(tiles)]
    bounds[-1] = (bounds[-1][0], length)
    return bounds


def bin_index(img: np.ndarray, bins: int) -> np.ndarray:
    return np.clip(np.floor(img * (bins / 256.0)).astype(np.intp), 0, bins - 1)


def equalization_lut(hist: np.ndarray, clip_limit: float = 0.0) -> np.ndarray:
    """
    Mapping bin -> output level from one histogram.
    With clip_limit > 0, counts above clip_limit * (pixels / bins) are cut and spread evenly over all bins.
    """
    hist = np.asarray(hist, dtype=np.float64)
    bins = hist.size
    total = hist.sum()
    if clip_limit > 0:
        limit = clip_limit * total / bins
        excess = np.maximum(hist - limit, 0.0).sum()
        hist = np.minimum(hist, limit) + excess / bins
    cdf = np.cumsum(hist)
    occupied = cdf[hist > 0]
    cdf_min = occupied[0] if occupied.size else 0.0
    if cdf[-1] - cdf_min <= 0:
        # a single occupied bin
        return 255.0 * cdf / cdf[-1]
    return np.clip(255.0 * (cdf - cdf_min) / (cdf[-1] - cdf_min), 0.0, 255.0)


def _blend_coords(bounds: list[tuple[int, int]], length: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    centers = np.array([a + (b - a - 1) / 2.0 for a, b in bounds])
    pos = np.interp(np.arange(length, dtype=np.float64), centers, np.arange(len(bounds), dtype=np.float64))
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, len(bounds) - 1)
    return lo, hi, pos - lo


def adaptive_hist_eq(img: np.ndarray, params: AheParams | None = None) -> np.ndarray:
    params = params or AheParams()
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h < params.tiles_y or w < params.tiles_x:
        raise ImageTooSmall(f"{w}x{h} image is smaller than the {params.tiles_x}x{params.tiles_y} tile grid")

    ybounds = tile_bounds(h, params.tiles_y)
    xbounds = tile_bounds(w, params.tiles_x)
    bins = bin_index(img, params.bins)
    luts = np.empty((params.tiles_y, params.tiles_x, params.bins))
    for ty, (y0, y1) in enumerate(ybounds):
        for tx, (x0, x1) in enumerate(xbounds):
            hist = np.bincount(bins[y0:y1, x0:x1].ravel(), minlength=params.bins)
            luts[ty, tx] = equalization_lut(hist, params.clip_limit)

    ylo, yhi, wy = _blend_coords(ybounds, h)
    xlo, xhi, wx = _blend_coords(xbounds, w)
    ylo, yhi, wy = ylo[:, None], yhi[:, None], wy[:, None]
    xlo, xhi, wx = xlo[None, :], xhi[None, :], wx[None, :]
    top = (1.0 - wx) * luts[ylo, xlo, bins] + wx * luts[ylo, xhi, bins]
    bottom = (1.0 - wx) * luts[yhi, xlo, bins] + wx * luts[yhi, xhi, bins]
    out = (1.0 - wy) * top + wy * bottom
    logger.debug("AHE %dx%d tiles, clip %.2f on %dx%d image", params.tiles_x, params.tiles_y, params.clip_limit, w, h)
    return np.clip(out, 0.0, 255.0)
