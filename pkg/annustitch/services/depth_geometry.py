# AnnuStitch — Depth Geometry
# Dark-lumen thresholding, contour tracing, ellipse fitting, rotation to canonical orientation, and the deepest point.

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from scipy import ndimage

from annustitch.errors import StageError
from annustitch.schemas import DepthParams, Ellipse

logger = logging.getLogger(__name__)

# Clockwise in image coordinates (y down), starting west. Entries are (dy, dx).
_MOORE_RING = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_RING_INDEX = {off: i for i, off in enumerate(_MOORE_RING)}
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


class DepthGeometryError(StageError):
    stage = "depth_geometry"


class EmptyMask(DepthGeometryError):
    pass


class DegenerateContour(DepthGeometryError):
    pass


class NoDarkRegion(DepthGeometryError):
    pass


@dataclass(frozen=True)
class Contour:
    """Ordered boundary pixels as an (N, 2) array of (x, y)."""

    points: np.ndarray

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class RotationResult:
    image: np.ndarray
    ellipse: Ellipse
    tau: float
    applied_angle: float
    mask: np.ndarray


def threshold_mask(img: np.ndarray, tau: float) -> np.ndarray:
    return np.asarray(img) < tau


def otsu_threshold(img: np.ndarray) -> float:
    """
    Per-frame default threshold. Otsu splits 8-bit levels into {<= t} and {> t};
    returning t + 0.5 makes the dark class exactly {img < tau} for integer-valued frames.
    """
    u8 = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    t, _ = cv2.threshold(u8, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    return float(t) + 0.5


def resolve_tau(img: np.ndarray, tau: float | None) -> float:
    return otsu_threshold(img) if tau is None else float(tau)


def largest_component_contour(mask: np.ndarray) -> Contour:
    """Moore-neighbour trace of the largest 8-connected component (first in raster order on ties)."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("mask has no true pixel")
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    sizes = np.bincount(labels.ravel())
    # labels are assigned in raster order, argmax keeps the first maximum
    largest = int(np.argmax(sizes[1:])) + 1
    component = np.pad(labels == largest, 1)
    logger.debug("%d components, largest has %d px", n, sizes[largest])
    pts = _moore_trace(component)
    return Contour(points=np.asarray(pts, dtype=np.float64) - 1.0)


def _moore_trace(comp: np.ndarray) -> list[tuple[int, int]]:
    ys, xs = np.nonzero(comp)
    start = (int(ys[0]), int(xs[0]))  # top-most, then left-most
    backtrack = (start[0], start[1] - 1)
    trace = [start]
    p = start
    while True:
        step = _next_boundary_pixel(comp, p, backtrack)
        if step is None:
            break  # isolated pixel
        c, backtrack = step
        # Jacob's criterion: back at start and about to repeat the first move
        if p == start and len(trace) > 1 and c == trace[1]:
            break
        trace.append(c)
        p = c
    if len(trace) > 1 and trace[-1] == start:
        trace.pop()
    return [(x, y) for y, x in trace]


def _next_boundary_pixel(comp, p, backtrack):
    k = _RING_INDEX[(backtrack[0] - p[0], backtrack[1] - p[1])]
    prev = backtrack
    for i in range(1, 9):
        dy, dx = _MOORE_RING[(k + i) % 8]
        q = (p[0] + dy, p[1] + dx)
        if comp[q]:
            return q, prev
        prev = q
    return None


def fit_ellipse(contour: Contour | np.ndarray) -> Ellipse:
    """
    Direct least-squares ellipse fit in the numerically stable split form
    (quadratic and linear blocks solved separately), on centred and scaled points.
    """
    pts = np.asarray(contour.points if isinstance(contour, Contour) else contour, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 5:
        raise DegenerateContour(f"need at least 5 points, got {len(pts)}")
    mean = pts.mean(axis=0)
    centred = pts - mean
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateContour("contour points are collinear")
    scale = math.sqrt(float(np.mean(np.sum(centred**2, axis=1))))
    u, v = (centred / scale).T

    d1 = np.column_stack([u * u, u * v, v * v])
    d2 = np.column_stack([u, v, np.ones_like(u)])
    s1, s2, s3 = d1.T @ d1, d1.T @ d2, d2.T @ d2
    t = -np.linalg.solve(s3, s2.T)
    m = s1 + s2 @ t
    # premultiply by the inverse of the ellipse constraint matrix
    m = np.vstack([m[2] / 2.0, -m[1], m[0] / 2.0])
    eigvals, eigvecs = np.linalg.eig(m)
    eigvecs = np.real(eigvecs)
    cond = 4.0 * eigvecs[0] * eigvecs[2] - eigvecs[1] ** 2
    if not np.any(cond > 0):
        raise DegenerateContour("best conic is not an ellipse")
    a1 = eigvecs[:, int(np.argmax(cond))]
    coeffs = np.concatenate([a1, t @ a1])
    return _conic_to_ellipse(coeffs, mean, scale)


def _conic_to_ellipse(coeffs: np.ndarray, mean: np.ndarray, scale: float) -> Ellipse:
    a, b, c, d, e, f = coeffs
    try:
        u0, v0 = np.linalg.solve([[2 * a, b], [b, 2 * c]], [-d, -e])
    except np.linalg.LinAlgError as exc:
        raise DegenerateContour("conic has no centre") from exc
    f0 = f + (d * u0 + e * v0) / 2.0
    lam, vec = np.linalg.eigh([[a, b / 2.0], [b / 2.0, c]])
    if lam[0] * lam[1] <= 0:
        raise DegenerateContour("conic is not an ellipse")
    if lam[0] < 0:
        lam, f0 = -lam[::-1], -f0
        vec = vec[:, ::-1]
    if f0 >= 0:
        raise DegenerateContour("imaginary ellipse")
    semi_major = math.sqrt(-f0 / lam[0]) * scale
    semi_minor = math.sqrt(-f0 / lam[1]) * scale
    angle = math.atan2(vec[1, 0], vec[0, 0]) % math.pi
    if angle >= math.pi:
        angle = 0.0
    center = (float(mean[0] + u0 * scale), float(mean[1] + v0 * scale))
    return Ellipse(center=center, semi_major=semi_major, semi_minor=max(semi_minor, 1e-12), angle=angle)


def rotate_image(img: np.ndarray, angle: float) -> np.ndarray:
    """
    Rotate about the image centre by `angle` radians (positive turns +x towards +y).
    Bilinear, zero fill, same dimensions.
    """
    img = np.asarray(img, dtype=np.float64)
    if angle == 0:
        return img.copy()
    h, w = img.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    # output p samples input at R(-angle)(p - c) + c
    cos_t, sin_t = math.cos(-angle), math.sin(-angle)
    dx, dy = xx - cx, yy - cy
    src_x = cos_t * dx - sin_t * dy + cx
    src_y = sin_t * dx + cos_t * dy + cy
    out = ndimage.map_coordinates(img, [src_y, src_x], order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 255.0)


def rotate_point(p: tuple[float, float], angle: float, shape: tuple[int, int]) -> tuple[float, float]:
    """Where pixel p lands when an image of `shape` is turned by `angle` with rotate_image."""
    h, w = shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    c, s = math.cos(angle), math.sin(angle)
    dx, dy = p[0] - cx, p[1] - cy
    return cx + c * dx - s * dy, cy + s * dx + c * dy


def rotate_to_canonical(
    img: np.ndarray, ellipse: Ellipse, ambiguity_ratio: float = 1.05
) -> tuple[np.ndarray, float]:
    """Turn the image by -angle so the fitted major axis is horizontal. Near-circles are left alone."""
    if ellipse.is_ambiguous(ambiguity_ratio):
        logger.debug("ellipse a/b=%.4f below %.4f, rotation skipped", ellipse.axis_ratio, ambiguity_ratio)
        return np.asarray(img, dtype=np.float64).copy(), 0.0
    applied = -ellipse.angle
    return rotate_image(img, applied), applied


def deepest_point(img: np.ndarray, tau: float) -> tuple[float, float]:
    ys, xs = np.nonzero(threshold_mask(img, tau))
    if xs.size == 0:
        raise NoDarkRegion(f"no pixel below tau={tau:g}")
    return float(xs.mean()), float(ys.mean())


def correct_rotation(img: np.ndarray, params: DepthParams, *, item_id: str | None = None) -> RotationResult:
    """threshold -> largest contour -> ellipse -> canonical rotation."""
    tau = resolve_tau(img, params.rotation_tau)
    mask = threshold_mask(img, tau)
    try:
        contour = largest_component_contour(mask)
        ellipse = fit_ellipse(contour)
    except DepthGeometryError as e:
        e.item_id = e.item_id or item_id
        raise
    rotated, applied = rotate_to_canonical(img, ellipse, params.circle_ambiguity_ratio)
    logger.debug(
        "%s: tau=%.1f ellipse a=%.1f b=%.1f angle=%.2f deg, applied %.2f deg",
        item_id, tau, ellipse.semi_major, ellipse.semi_minor,
        math.degrees(ellipse.angle), math.degrees(applied),
    )
    return RotationResult(image=rotated, ellipse=ellipse, tau=tau, applied_angle=applied, mask=mask)


def render_depth_debug(img: np.ndarray, mask: np.ndarray, ellipse: Ellipse | None) -> np.ndarray:
    """BGR overlay: dark mask tinted red, fitted ellipse in green."""
    gray = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    out = cv2.cvtColor(gray, cv2.COLOR_GRAY2BGR)
    out[np.asarray(mask, dtype=bool)] = (0.5 * out[np.asarray(mask, dtype=bool)] + (0, 0, 127)).astype(np.uint8)
    if ellipse is not None:
        box = (ellipse.center, (2 * ellipse.semi_major, 2 * ellipse.semi_minor), math.degrees(ellipse.angle))
        cv2.ellipse(out, box, (0, 255, 0), 1)
    return out


def write_depth_debug(debug_dir: str | Path, item_id: str, result: RotationResult, img: np.ndarray) -> Path:
    path = Path(debug_dir) / f"{item_id}_depth.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    ok, buf = cv2.imencode(".png", render_depth_debug(img, result.mask, result.ellipse))
    if ok:
        path.write_bytes(buf.tobytes())
    return path
