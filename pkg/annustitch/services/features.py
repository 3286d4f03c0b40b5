# AnnuStitch — Scale-Invariant Features
# Difference-of-Gaussian keypoints with orientation and 128-d gradient descriptors, plus ratio-test matching.

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator

import cv2
import numpy as np
from scipy import ndimage
from scipy.spatial.distance import cdist

from annustitch.errors import StageError
from annustitch.schemas import FeatureParams, Keypoint, MatchPair

logger = logging.getLogger(__name__)

MIN_IMAGE_SIDE = 32
MIN_OCTAVE_SIDE = 16
EXTREMUM_BORDER = 5
MAX_REFINE_STEPS = 5

ORI_BINS = 36
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0
ORI_PEAK_RATIO = 0.8
ORI_SMOOTH = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

DESC_WIDTH = 4
DESC_BINS = 8
DESC_SCALE = 3.0
DESC_CLAMP = 0.2
DESC_DIM = DESC_WIDTH * DESC_WIDTH * DESC_BINS

TWO_PI = 2.0 * math.pi
RATIO_TIE_RTOL = 1e-12


class FeatureError(StageError):
    stage = "features"


class ImageTooSmall(FeatureError):
    pass


@dataclass(frozen=True)
class KeypointSet:
    """Keypoints in original-image pixels with one unit-norm descriptor row each."""

    xy: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    sigma: np.ndarray = field(default_factory=lambda: np.empty(0))
    orientation: np.ndarray = field(default_factory=lambda: np.empty(0))
    response: np.ndarray = field(default_factory=lambda: np.empty(0))
    descriptors: np.ndarray = field(default_factory=lambda: np.empty((0, DESC_DIM)))

    def __len__(self) -> int:
        return len(self.xy)

    def keypoints(self) -> list[Keypoint]:
        return [
            Keypoint(x=float(x), y=float(y), sigma=float(s), orientation=float(o), response=float(r))
            for (x, y), s, o, r in zip(self.xy, self.sigma, self.orientation, self.response)
        ]

    def __iter__(self) -> Iterator[tuple[Keypoint, np.ndarray]]:
        return iter(zip(self.keypoints(), self.descriptors))


# ---------------------------------------------------------------------------
# scale space


def _blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return cv2.GaussianBlur(img, (0, 0), sigmaX=sigma, sigmaY=sigma, borderType=cv2.BORDER_REFLECT_101)


def _halve(img: np.ndarray) -> np.ndarray:
    """2x2 block mean after cropping to even size."""
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    return img[:h, :w].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _octave_count(base_shape: tuple[int, int], wanted: int) -> int:
    side, count = min(base_shape), 0
    while count < wanted and side >= MIN_OCTAVE_SIDE:
        count += 1
        side //= 2
    return count


def build_gaussian_pyramid(img01: np.ndarray, params: FeatureParams) -> list[np.ndarray]:
    """
    One (s + 3, H, W) stack per octave, the first octave at twice the input resolution.
    Octave o covers sigma0 * 2**(k / s) for k = 0 .. s + 2 in its own pixel units.
    """
    s = params.scales_per_octave
    h, w = img01.shape
    base = cv2.resize(np.ascontiguousarray(img01, dtype=np.float64), (2 * w, 2 * h), interpolation=cv2.INTER_LINEAR)
    initial = math.sqrt(max(params.sigma**2 - (2.0 * params.assumed_blur) ** 2, 0.01))
    current = _blur(base, initial)
    sigmas = [params.sigma * 2.0 ** (k / s) for k in range(s + 3)]
    increments = [math.sqrt(sigmas[k] ** 2 - sigmas[k - 1] ** 2) for k in range(1, s + 3)]

    pyramid = []
    for o in range(_octave_count(base.shape, params.octaves + 1)):
        if o > 0:
            current = _halve(pyramid[-1][s])
        layers = [current]
        for inc in increments:
            layers.append(_blur(layers[-1], inc))
        pyramid.append(np.stack(layers))
    return pyramid


# ---------------------------------------------------------------------------
# extrema


def _derivatives(dog: np.ndarray, z: int, y: int, x: int) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian of the DoG in (x, y, scale) order by central differences."""
    c = dog[z, y, x]
    dx = (dog[z, y, x + 1] - dog[z, y, x - 1]) / 2.0
    dy = (dog[z, y + 1, x] - dog[z, y - 1, x]) / 2.0
    ds = (dog[z + 1, y, x] - dog[z - 1, y, x]) / 2.0
    dxx = dog[z, y, x + 1] + dog[z, y, x - 1] - 2.0 * c
    dyy = dog[z, y + 1, x] + dog[z, y - 1, x] - 2.0 * c
    dss = dog[z + 1, y, x] + dog[z - 1, y, x] - 2.0 * c
    dxy = (dog[z, y + 1, x + 1] - dog[z, y + 1, x - 1] - dog[z, y - 1, x + 1] + dog[z, y - 1, x - 1]) / 4.0
    dxs = (dog[z + 1, y, x + 1] - dog[z + 1, y, x - 1] - dog[z - 1, y, x + 1] + dog[z - 1, y, x - 1]) / 4.0
    dys = (dog[z + 1, y + 1, x] - dog[z + 1, y - 1, x] - dog[z - 1, y + 1, x] + dog[z - 1, y - 1, x]) / 4.0
    grad = np.array([dx, dy, ds])
    hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return grad, hess


def _refine(dog: np.ndarray, z: int, y: int, x: int, params: FeatureParams):
    """Quadratic sub-pixel refinement; None when the candidate drifts away, is weak, or sits on an edge."""
    s = params.scales_per_octave
    _, h, w = dog.shape
    for _ in range(MAX_REFINE_STEPS):
        grad, hess = _derivatives(dog, z, y, x)
        offset = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        if np.all(np.abs(offset) < 0.5):
            break
        if np.any(np.abs(offset) > 2 * max(h, w)):
            return None
        x += int(round(offset[0]))
        y += int(round(offset[1]))
        z += int(round(offset[2]))
        if not (1 <= z <= s and EXTREMUM_BORDER <= y < h - EXTREMUM_BORDER and EXTREMUM_BORDER <= x < w - EXTREMUM_BORDER):
            return None
    else:
        return None

    value = dog[z, y, x] + 0.5 * float(grad @ offset)
    if abs(value) < params.contrast_threshold:
        return None
    tr = hess[0, 0] + hess[1, 1]
    det = hess[0, 0] * hess[1, 1] - hess[0, 1] ** 2
    r = params.edge_ratio_threshold
    if det <= 0 or tr * tr / det >= (r + 1) ** 2 / r:
        return None
    return z, y, x, offset, value


def _candidates(dog: np.ndarray, params: FeatureParams) -> np.ndarray:
    threshold = 0.5 * params.contrast_threshold / params.scales_per_octave
    maxf = ndimage.maximum_filter(dog, size=3, mode="nearest")
    minf = ndimage.minimum_filter(dog, size=3, mode="nearest")
    cand = ((dog == maxf) & (dog > threshold)) | ((dog == minf) & (dog < -threshold))
    b = EXTREMUM_BORDER
    cand[0] = cand[-1] = False
    cand[:, :b] = cand[:, -b:] = False
    cand[:, :, :b] = cand[:, :, -b:] = False
    return np.argwhere(cand)


# ---------------------------------------------------------------------------
# orientation and descriptor


def _gradients(patch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude and angle of the interior of a patch with a 1-pixel margin."""
    gx = patch[1:-1, 2:] - patch[1:-1, :-2]
    gy = patch[2:, 1:-1] - patch[:-2, 1:-1]
    return np.hypot(gx, gy), np.mod(np.arctan2(gy, gx), TWO_PI)


def _orientations(gimg: np.ndarray, x: float, y: float, sigma_oct: float) -> list[float]:
    sig = ORI_SIGMA_FACTOR * sigma_oct
    radius = int(round(ORI_RADIUS_FACTOR * sig))
    xi, yi = int(round(x)), int(round(y))
    h, w = gimg.shape
    y0, y1 = max(yi - radius, 1), min(yi + radius, h - 2)
    x0, x1 = max(xi - radius, 1), min(xi + radius, w - 2)
    if y0 > y1 or x0 > x1:
        return []
    mag, ang = _gradients(gimg[y0 - 1 : y1 + 2, x0 - 1 : x1 + 2])
    yy, xx = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    weight = np.exp(-((xx - xi) ** 2 + (yy - yi) ** 2) / (2.0 * sig * sig))
    bins = np.rint(ang * ORI_BINS / TWO_PI).astype(np.intp) % ORI_BINS
    hist = np.bincount(bins.ravel(), weights=(weight * mag).ravel(), minlength=ORI_BINS)
    smooth = np.convolve(np.concatenate([hist[-2:], hist, hist[:2]]), ORI_SMOOTH, mode="valid")
    peak = smooth.max()
    if peak <= 0:
        return []
    left, right = np.roll(smooth, 1), np.roll(smooth, -1)
    peaks = np.nonzero((smooth > left) & (smooth > right) & (smooth >= ORI_PEAK_RATIO * peak))[0]
    out = []
    for i in peaks:
        l, c, r = left[i], smooth[i], right[i]
        shift = 0.5 * (l - r) / (l - 2.0 * c + r)
        theta = TWO_PI * ((i + shift) % ORI_BINS) / ORI_BINS
        out.append(theta if theta < TWO_PI else 0.0)
    return out


def _descriptor(gimg: np.ndarray, x: float, y: float, sigma_oct: float, ori: float) -> np.ndarray | None:
    d, n = DESC_WIDTH, DESC_BINS
    hist_width = DESC_SCALE * sigma_oct
    radius = int(round(hist_width * math.sqrt(2.0) * (d + 1) * 0.5))
    xi, yi = int(round(x)), int(round(y))
    h, w = gimg.shape
    if xi - radius < 1 or yi - radius < 1 or xi + radius > w - 2 or yi + radius > h - 2:
        return None

    mag, ang = _gradients(gimg[yi - radius - 1 : yi + radius + 2, xi - radius - 1 : xi + radius + 2])
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1].astype(np.float64)
    dx += xi - x
    dy += yi - y
    cos_t, sin_t = math.cos(ori), math.sin(ori)
    xr = (cos_t * dx + sin_t * dy) / hist_width
    yr = (-sin_t * dx + cos_t * dy) / hist_width
    rbin = yr + d / 2.0 - 0.5
    cbin = xr + d / 2.0 - 0.5
    inside = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d)
    if not inside.any():
        return None

    rbin, cbin = rbin[inside], cbin[inside]
    obin = np.mod(ang[inside] - ori, TWO_PI) * n / TWO_PI
    value = mag[inside] * np.exp(-(xr[inside] ** 2 + yr[inside] ** 2) / (2.0 * (0.5 * d) ** 2))
    r0, c0, o0 = np.floor(rbin), np.floor(cbin), np.floor(obin)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    r0, c0, o0 = r0.astype(np.intp) + 1, c0.astype(np.intp) + 1, o0.astype(np.intp)

    hist = np.zeros((d + 2, d + 2, n))
    for dr, wr in ((0, 1.0 - fr), (1, fr)):
        for dc, wc in ((0, 1.0 - fc), (1, fc)):
            for do, wo in ((0, 1.0 - fo), (1, fo)):
                np.add.at(hist, (r0 + dr, c0 + dc, (o0 + do) % n), value * wr * wc * wo)

    vec = hist[1 : d + 1, 1 : d + 1].ravel()
    norm = np.linalg.norm(vec)
    if norm <= 0:
        return None
    vec = np.minimum(vec / norm, DESC_CLAMP)
    return vec / np.linalg.norm(vec)


# ---------------------------------------------------------------------------
# public API


def detect_and_describe(img: np.ndarray, params: FeatureParams | None = None) -> KeypointSet:
    """Keypoints and descriptors of a GrayImage, in a deterministic order (octave, scale, row, column)."""
    params = params or FeatureParams()
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        raise ImageTooSmall(f"{w}x{h} image below {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")

    s = params.scales_per_octave
    xy, sigma, orientation, response, descriptors = [], [], [], [], []
    for o_idx, gauss in enumerate(build_gaussian_pyramid(img / 255.0, params)):
        octave = o_idx - 1
        factor = 2.0**octave
        dog = gauss[1:] - gauss[:-1]
        seen: set[tuple[int, int, int]] = set()
        for z, y, x in _candidates(dog, params):
            refined = _refine(dog, int(z), int(y), int(x), params)
            if refined is None:
                continue
            rz, ry, rx, offset, value = refined
            if (rz, ry, rx) in seen:
                continue
            seen.add((rz, ry, rx))
            xo, yo = rx + offset[0], ry + offset[1]
            sigma_oct = params.sigma * 2.0 ** ((rz + offset[2]) / s)
            gimg = gauss[rz]
            for ori in _orientations(gimg, xo, yo, sigma_oct):
                desc = _descriptor(gimg, xo, yo, sigma_oct, ori)
                if desc is None:
                    continue
                xy.append((factor * (xo + 0.5) - 0.5, factor * (yo + 0.5) - 0.5))
                sigma.append(sigma_oct * factor)
                orientation.append(ori)
                response.append(abs(value))
                descriptors.append(desc)

    logger.debug("%d keypoints on %dx%d image", len(xy), w, h)
    if not xy:
        return KeypointSet()
    return KeypointSet(
        xy=np.asarray(xy),
        sigma=np.asarray(sigma),
        orientation=np.asarray(orientation),
        response=np.asarray(response),
        descriptors=np.asarray(descriptors),
    )


def match_ratio(desc_a: np.ndarray, desc_b: np.ndarray, ratio: float = 0.75) -> list[MatchPair]:
    """For each descriptor of A, keep its nearest neighbour in B iff d1 < ratio * d2."""
    desc_a = np.asarray(desc_a, dtype=np.float64)
    desc_b = np.asarray(desc_b, dtype=np.float64)
    if desc_a.ndim != 2 or desc_b.ndim != 2 or len(desc_a) == 0 or len(desc_b) < 2:
        return []
    dist = cdist(desc_a, desc_b)
    order = np.argsort(dist, axis=1, kind="stable")[:, :2]
    rows = np.arange(len(desc_a))
    d1, d2 = dist[rows, order[:, 0]], dist[rows, order[:, 1]]
    bound = ratio * d2
    # ties within rounding of the bound are not strictly below it
    keep = np.nonzero((d1 < bound) & ~np.isclose(d1, bound, rtol=RATIO_TIE_RTOL, atol=0.0))[0]
    return [
        MatchPair(index_a=int(i), index_b=int(order[i, 0]), d1=float(d1[i]), d2=float(d2[i]))
        for i in keep
    ]


def keypoints_to_records(kps: KeypointSet) -> list[dict]:
    return [kp.model_dump() for kp in kps.keypoints()]


def matches_to_records(matches: list[MatchPair]) -> list[dict]:
    return [m.model_dump() for m in matches]
