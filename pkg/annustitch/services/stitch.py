# AnnuStitch — Panorama Compositing
# Chains pairwise motion into placements in the first strip's frame and feather-blends strips onto one canvas.

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from annustitch.errors import StageError
from annustitch.schemas import ModelKind, MotionModel, RansacResult

logger = logging.getLogger(__name__)


class StitchError(StageError):
    stage = "stitch"


class ChainBroken(StitchError):
    def __init__(self, message: str, *, link_index: int, item_id: str | None = None):
        super().__init__(message, item_id=item_id)
        self.link_index = link_index


@dataclass(frozen=True)
class ChainBreak:
    link_index: int
    reason: str


@dataclass
class Panorama:
    canvas: np.ndarray
    placements: list[tuple[str, MotionModel]]
    seam_metadata: dict
    # position of the first strip's origin inside the canvas, (x, y)
    origin: tuple[int, int] = (0, 0)
    coverage: np.ndarray | None = None


def feather_weights(shape: tuple[int, int]) -> np.ndarray:
    """Distance to the nearest strip edge, normalized to (0, 1]."""
    h, w = shape
    rows = np.minimum(np.arange(h) + 1, h - np.arange(h))[:, None]
    cols = np.minimum(np.arange(w) + 1, w - np.arange(w))[None, :]
    d = np.minimum(rows, cols).astype(np.float64)
    return d / d.max()


def link_reason(link: RansacResult | None, min_inliers: int) -> str | None:
    if link is None:
        return "no motion estimate"
    if link.valid_match_count < min_inliers:
        return f"{link.valid_match_count} inliers < {min_inliers}"
    return None


@dataclass
class PanoramaBuilder:
    """Incremental compositor. Rendering after every append equals composing the whole chain at once."""

    min_inliers: int = 4
    cyclic: bool = False
    _strips: list[np.ndarray] = field(default_factory=list)
    _ids: list[str] = field(default_factory=list)
    _placements: list[MotionModel] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self._strips)

    def add(self, strip: np.ndarray, link: RansacResult | None = None, frame_id: str | None = None) -> "PanoramaBuilder":
        """Append a strip. `link` maps the previous strip onto this one and is required after the first."""
        strip = np.asarray(strip, dtype=np.float64)
        if self._strips:
            reason = link_reason(link, self.min_inliers)
            if reason is not None:
                raise ChainBroken(f"link {len(self._strips) - 1} broken: {reason}", link_index=len(self._strips) - 1)
            placement = link.model.inverse().then(self._placements[-1])
        else:
            placement = MotionModel.identity()
        if self.cyclic and self._strips and strip.shape[1] != self._strips[0].shape[1]:
            raise StitchError("cyclic compositing needs strips of equal width")
        self._strips.append(strip)
        self._ids.append(frame_id if frame_id is not None else str(len(self._ids)))
        self._placements.append(placement)
        return self

    def render(self) -> Panorama:
        if not self._strips:
            raise StitchError("nothing to composite")
        if all(p.kind is ModelKind.TRANSLATION for p in self._placements):
            return self._render_translation()
        if self.cyclic:
            raise StitchError("cyclic compositing supports translation placements only")
        return self._render_warped()

    def _render_translation(self) -> Panorama:
        offsets = [(int(round(p.translation[0])), int(round(p.translation[1]))) for p in self._placements]
        x_min = min(ox for ox, _ in offsets)
        y_min = min(oy for _, oy in offsets)
        y_max = max(oy + s.shape[0] for (_, oy), s in zip(offsets, self._strips))
        if self.cyclic:
            width = self._strips[0].shape[1]
            x_min = 0
        else:
            width = max(ox + s.shape[1] for (ox, _), s in zip(offsets, self._strips)) - x_min
        height = y_max - y_min

        acc = _Accumulator((height, width))
        for (ox, oy), strip in zip(offsets, self._strips):
            h, w = strip.shape
            cols = np.arange(w) + ox - x_min
            if self.cyclic:
                cols %= width
            rows = np.arange(h) + oy - y_min
            acc.add(np.ix_(rows, cols), strip, feather_weights(strip.shape))

        meta = {
            "blend": "linear_feather",
            "cyclic": self.cyclic,
            "offsets": [list(o) for o in offsets],
            "overlaps": acc.overlap_summary(),
        }
        return self._finish(acc, meta, (-x_min, -y_min))

    def _render_warped(self) -> Panorama:
        corners = []
        for p, s in zip(self._placements, self._strips):
            h, w = s.shape
            corners.append(p.apply(np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)))
        pts = np.vstack(corners)
        x_min, y_min = np.floor(pts.min(axis=0)).astype(int)
        x_max, y_max = np.ceil(pts.max(axis=0)).astype(int)
        height, width = int(y_max - y_min + 1), int(x_max - x_min + 1)

        acc = _Accumulator((height, width))
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        canvas_pts = np.column_stack([xx.ravel() + x_min, yy.ravel() + y_min])
        for p, strip in zip(self._placements, self._strips):
            h, w = strip.shape
            src = p.inverse().apply(canvas_pts)
            sx, sy = src[:, 0].reshape(height, width), src[:, 1].reshape(height, width)
            inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
            vals = ndimage.map_coordinates(strip, [sy, sx], order=1, mode="nearest")
            weights = ndimage.map_coordinates(feather_weights(strip.shape), [sy, sx], order=1, mode="nearest")
            acc.add(inside, vals[inside], weights[inside])

        meta = {"blend": "linear_feather", "cyclic": False, "overlaps": acc.overlap_summary()}
        return self._finish(acc, meta, (-int(x_min), -int(y_min)))

    def _finish(self, acc: "_Accumulator", meta: dict, origin: tuple[int, int]) -> Panorama:
        canvas = acc.result()
        logger.debug("panorama %dx%d from %d strips", canvas.shape[1], canvas.shape[0], len(self._strips))
        return Panorama(
            canvas=canvas,
            placements=list(zip(self._ids, self._placements)),
            seam_metadata=meta,
            origin=origin,
            coverage=acc.count,
        )


class _Accumulator:
    """Weighted sums; pixels covered once keep the exact source value."""

    def __init__(self, shape: tuple[int, int]):
        self.num = np.zeros(shape)
        self.den = np.zeros(shape)
        self.first = np.zeros(shape)
        self.count = np.zeros(shape, dtype=np.intp)

    def add(self, where, values: np.ndarray, weights: np.ndarray) -> None:
        fresh = self.count[where] == 0
        first = self.first[where]
        self.first[where] = np.where(fresh, values, first)
        self.num[where] += weights * values
        self.den[where] += weights
        self.count[where] += 1

    def result(self) -> np.ndarray:
        out = np.zeros_like(self.num)
        single = self.count == 1
        multi = self.count >= 2
        out[single] = self.first[single]
        out[multi] = self.num[multi] / self.den[multi]
        return out

    def overlap_summary(self) -> dict:
        return {
            "pixels_single": int(np.count_nonzero(self.count == 1)),
            "pixels_overlap": int(np.count_nonzero(self.count >= 2)),
            "max_coverage": int(self.count.max(initial=0)),
        }


def compose(
    strips: list[np.ndarray],
    pairwise: list[RansacResult | None],
    *,
    min_inliers: int = 4,
    cyclic: bool = False,
    frame_ids: list[str] | None = None,
) -> Panorama:
    """Place every strip in the first strip's frame (placement_{k+1} = placement_k after T_k^-1) and blend."""
    if len(pairwise) != len(strips) - 1:
        raise ValueError(f"{len(strips)} strips need {len(strips) - 1} links, got {len(pairwise)}")
    ids = frame_ids or [str(i) for i in range(len(strips))]
    builder = PanoramaBuilder(min_inliers=min_inliers, cyclic=cyclic)
    builder.add(strips[0], frame_id=ids[0])
    for k, strip in enumerate(strips[1:]):
        builder.add(strip, pairwise[k], frame_id=ids[k + 1])
    return builder.render()


def compose_segments(
    strips: list[np.ndarray],
    pairwise: list[RansacResult | None],
    *,
    min_inliers: int = 4,
    cyclic: bool = False,
    frame_ids: list[str] | None = None,
) -> tuple[list[Panorama], list[ChainBreak]]:
    """Split the chain at broken links and composite each segment on its own."""
    if len(pairwise) != len(strips) - 1:
        raise ValueError(f"{len(strips)} strips need {len(strips) - 1} links, got {len(pairwise)}")
    ids = frame_ids or [str(i) for i in range(len(strips))]
    panoramas: list[Panorama] = []
    breaks: list[ChainBreak] = []
    start = 0
    for k in range(len(strips)):
        reason = link_reason(pairwise[k], min_inliers) if k < len(pairwise) else "end"
        if reason is None:
            continue
        if k < len(pairwise):
            breaks.append(ChainBreak(link_index=k, reason=reason))
            logger.warning("chain broken after strip %s: %s", ids[k], reason)
        panoramas.append(
            compose(
                strips[start : k + 1],
                pairwise[start:k],
                min_inliers=min_inliers,
                cyclic=cyclic,
                frame_ids=ids[start : k + 1],
            )
        )
        start = k + 1
    return panoramas, breaks


def panorama_to_record(pano: Panorama) -> dict:
    return {
        "width": int(pano.canvas.shape[1]),
        "height": int(pano.canvas.shape[0]),
        "origin": list(pano.origin),
        "placements": [{"frame_id": fid, "model": m.model_dump(mode="json")} for fid, m in pano.placements],
        "seam_metadata": pano.seam_metadata,
    }
