# AnnuStitch — Polar Unwrapping
# Annulus selection around the deepest point and the polar <-> rectangular resampling of frames.

import logging
import math

import numpy as np
from pydantic import ValidationError
from scipy import ndimage

from annustitch.errors import StageError
from annustitch.schemas import Annulus, UnwrapParams, UnwrapSpec
from annustitch.services.depth_geometry import rotate_point, threshold_mask

logger = logging.getLogger(__name__)

_BOUNDS_EPS = 1e-9


class UnwrapError(StageError):
    stage = "unwrap"


class CenterOutOfBounds(UnwrapError):
    pass


class DegenerateAnnulus(UnwrapError):
    pass


class SpecImageMismatch(UnwrapError):
    pass


def border_distance(shape: tuple[int, int], center: tuple[float, float]) -> float:
    h, w = shape
    x0, y0 = center
    return min(x0, y0, w - 1 - x0, h - 1 - y0)


def annulus_radii(img: np.ndarray, center: tuple[float, float], tau: float) -> tuple[float, float]:
    """
    Outer radius: the largest circle around `center` that stays inside the image.
    Inner radius: the smallest circle around `center` enclosing every below-threshold pixel.
    """
    h, w = img.shape
    x0, y0 = center
    if not (0 <= x0 <= w - 1 and 0 <= y0 <= h - 1):
        raise CenterOutOfBounds(f"center ({x0:.2f}, {y0:.2f}) outside {w}x{h} image")
    r_max = border_distance(img.shape, center)
    ys, xs = np.nonzero(threshold_mask(img, tau))
    r_min = float(np.hypot(xs - x0, ys - y0).max()) if xs.size else 0.0
    if r_min >= r_max:
        raise DegenerateAnnulus(f"inner radius {r_min:.2f} >= outer radius {r_max:.2f}")
    return r_min, float(r_max)


def make_unwrap_spec(
    img: np.ndarray,
    center: tuple[float, float],
    tau: float,
    params: UnwrapParams | None = None,
) -> UnwrapSpec:
    """Build the sampling spec; radii and sample counts not fixed in `params` are derived from the frame."""
    params = params or UnwrapParams()
    if params.r_min is None or params.r_max is None:
        auto_min, auto_max = annulus_radii(img, center, tau)
    else:
        auto_min, auto_max = params.r_min, params.r_max
    r_min = auto_min if params.r_min is None else params.r_min
    r_max = auto_max if params.r_max is None else params.r_max
    n_theta = params.n_theta if params.n_theta is not None else max(8, round(2 * math.pi * r_max))
    n_r = params.n_r if params.n_r is not None else max(2, round(r_max - r_min))
    try:
        spec = UnwrapSpec(
            center=(float(center[0]), float(center[1])),
            r_min=r_min,
            r_max=r_max,
            n_theta=n_theta,
            n_r=n_r,
            theta_origin=params.theta_origin,
        )
    except ValidationError as e:
        raise DegenerateAnnulus(f"invalid annulus: {e.errors()[0]['msg']}") from e
    check_spec(img.shape, spec)
    logger.debug("unwrap spec r=[%.2f, %.2f] n_theta=%d n_r=%d", r_min, r_max, n_theta, n_r)
    return spec


def check_spec(shape: tuple[int, int], spec: UnwrapSpec) -> None:
    h, w = shape
    x0, y0 = spec.center
    if not (0 <= x0 <= w - 1 and 0 <= y0 <= h - 1):
        raise SpecImageMismatch(f"center ({x0:.2f}, {y0:.2f}) outside {w}x{h} image")
    if spec.r_max > border_distance(shape, spec.center) + _BOUNDS_EPS:
        raise SpecImageMismatch(f"outer circle r={spec.r_max:.2f} exits the {w}x{h} image")


def polar_grid(spec: UnwrapSpec) -> tuple[np.ndarray, np.ndarray]:
    """Source (x, y) coordinates for every strip pixel, each shaped (n_r, n_theta)."""
    r = spec.radii()[:, None]
    theta = spec.thetas()[None, :]
    x0, y0 = spec.center
    return x0 + r * np.cos(theta), y0 + r * np.sin(theta)


def unwrap(img: np.ndarray, spec: UnwrapSpec) -> np.ndarray:
    """Row i holds radius r_min + i*(r_max - r_min)/(n_r - 1); column j holds angle theta_origin + j*2pi/n_theta."""
    img = np.asarray(img, dtype=np.float64)
    check_spec(img.shape, spec)
    xs, ys = polar_grid(spec)
    out = ndimage.map_coordinates(img, [ys, xs], order=1, mode="nearest")
    return np.clip(out, img.min(), img.max())


def rewrap(strip: np.ndarray, spec: UnwrapSpec, canvas: tuple[int, int]) -> np.ndarray:
    """Inverse polar map onto a (height, width) canvas; zero outside the annulus."""
    strip = np.asarray(strip, dtype=np.float64)
    if strip.shape != (spec.n_r, spec.n_theta):
        raise SpecImageMismatch(f"strip shape {strip.shape} != ({spec.n_r}, {spec.n_theta})")
    h, w = canvas
    check_spec((h, w), spec)
    x0, y0 = spec.center
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - x0, yy - y0
    r = np.hypot(dx, dy)
    theta = np.mod(np.arctan2(dy, dx) - spec.theta_origin, 2 * math.pi)
    rows = (r - spec.r_min) * (spec.n_r - 1) / (spec.r_max - spec.r_min)
    cols = theta * spec.n_theta / (2 * math.pi)
    # column n_theta wraps to column 0
    cyclic = np.concatenate([strip, strip[:, :1]], axis=1)
    out = ndimage.map_coordinates(cyclic, [rows, cols], order=1, mode="nearest")
    inside = (r >= spec.r_min) & (r <= spec.r_max)
    return np.where(inside, out, 0.0)


def spec_to_json(spec: UnwrapSpec) -> str:
    return spec.model_dump_json(indent=2)


def carry_annulus(spec: UnwrapSpec, angle: float, shape: tuple[int, int]) -> Annulus:
    """
    The annulus of `spec` on the same frame turned by `angle`. The zero-filled corners of a
    turned frame read as lumen, so the radii are not searched again: r_min is kept and r_max
    shrinks to the border if the moved centre requires it.
    """
    center = rotate_point(spec.center, angle, shape)
    return Annulus(center=center, r_min=spec.r_min, r_max=min(spec.r_max, border_distance(shape, center)))


def spec_for_annulus(img: np.ndarray, annulus: Annulus, params: UnwrapParams | None = None) -> UnwrapSpec:
    fixed = (params or UnwrapParams()).model_copy(update={"r_min": annulus.r_min, "r_max": annulus.r_max})
    return make_unwrap_spec(img, annulus.center, 0.0, fixed)
