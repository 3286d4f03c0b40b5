# AnnuStitch — Robust Motion Estimation
# Seeded RANSAC over ratio-test matches (translation or homography) and the valid-match-count metric.

import logging
from itertools import combinations

import numpy as np
from scipy.spatial.distance import cdist

from annustitch.errors import StageError
from annustitch.schemas import MatchPair, ModelKind, MotionModel, RansacParams, RansacResult

logger = logging.getLogger(__name__)

MIN_SAMPLE = {ModelKind.TRANSLATION: 1, ModelKind.HOMOGRAPHY: 4}
_CHUNK = 256


class EstimationError(StageError):
    stage = "robust_estimation"


class InsufficientMatches(EstimationError):
    pass


class NoConsensus(EstimationError):
    pass


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed % 2**64)


def matched_points(matches: list[MatchPair], pts_a: np.ndarray, pts_b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pts_a = np.asarray(pts_a, dtype=np.float64).reshape(-1, 2)
    pts_b = np.asarray(pts_b, dtype=np.float64).reshape(-1, 2)
    ia = np.fromiter((m.index_a for m in matches), dtype=np.intp, count=len(matches))
    ib = np.fromiter((m.index_b for m in matches), dtype=np.intp, count=len(matches))
    return pts_a[ia], pts_b[ib]


# ---------------------------------------------------------------------------
# homography helpers


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.mean(np.hypot(*(pts - c).T))
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0.0, -s * c[0]], [0.0, s, -s * c[1]], [0.0, 0.0, 1.0]])


def _has_collinear_triple(pts: np.ndarray, eps: float = 1e-9) -> bool:
    scale = max(float(np.ptp(pts, axis=0).max()), 1.0)
    for i, j, k in combinations(range(len(pts)), 3):
        u, v = pts[j] - pts[i], pts[k] - pts[i]
        if abs(u[0] * v[1] - u[1] * v[0]) <= eps * scale * scale:
            return True
    return False


def fit_homography(a: np.ndarray, b: np.ndarray) -> np.ndarray | None:
    """Normalized DLT; least squares when more than 4 correspondences. None when degenerate."""
    if len(a) < 4:
        return None
    ta, tb = _normalizing_transform(a), _normalizing_transform(b)
    an = np.c_[a, np.ones(len(a))] @ ta.T
    bn = np.c_[b, np.ones(len(b))] @ tb.T
    x, y = an[:, 0], an[:, 1]
    u, v = bn[:, 0], bn[:, 1]
    zero, one = np.zeros_like(x), np.ones_like(x)
    rows_u = np.column_stack([-x, -y, -one, zero, zero, zero, u * x, u * y, u])
    rows_v = np.column_stack([zero, zero, zero, -x, -y, -one, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.vstack([rows_u, rows_v]))
    hn = vt[-1].reshape(3, 3)
    h = np.linalg.inv(tb) @ hn @ ta
    if not np.all(np.isfinite(h)) or abs(h[2, 2]) < 1e-12:
        return None
    h = h / h[2, 2]
    if abs(np.linalg.det(h)) < 1e-8 or np.linalg.cond(h) > 1e12:
        return None
    return h


def transfer_error(h: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """One-way transfer error ||H a - b||; infinite where H sends a point to infinity."""
    q = np.c_[a, np.ones(len(a))] @ h.T
    w = q[:, 2]
    err = np.full(len(a), np.inf)
    ok = np.abs(w) > 1e-12
    err[ok] = np.hypot(q[ok, 0] / w[ok] - b[ok, 0], q[ok, 1] / w[ok] - b[ok, 1])
    return err


# ---------------------------------------------------------------------------
# RANSAC


def _ransac_translation(a: np.ndarray, b: np.ndarray, params: RansacParams) -> tuple[MotionModel, np.ndarray]:
    diffs = b - a
    samples = _rng(params.seed).integers(0, len(a), size=params.iterations)
    hypotheses = diffs[samples]
    counts = np.empty(params.iterations, dtype=np.intp)
    for start in range(0, params.iterations, _CHUNK):
        block = hypotheses[start : start + _CHUNK]
        counts[start : start + len(block)] = (cdist(block, diffs) < params.inlier_tolerance).sum(axis=1)
    best = int(np.argmax(counts))
    hypothesis = hypotheses[best]
    inliers = np.nonzero(np.hypot(*(diffs - hypothesis).T) < params.inlier_tolerance)[0]

    refit = diffs[inliers].mean(axis=0)
    refit_inliers = np.nonzero(np.hypot(*(diffs - refit).T) < params.inlier_tolerance)[0]
    if len(refit_inliers) >= len(inliers):
        hypothesis, inliers = refit, refit_inliers
    model = MotionModel(kind=ModelKind.TRANSLATION, translation=(float(hypothesis[0]), float(hypothesis[1])))
    return model, inliers


def _ransac_homography(a: np.ndarray, b: np.ndarray, params: RansacParams) -> tuple[MotionModel, np.ndarray]:
    rng = _rng(params.seed)
    samples = np.stack([rng.choice(len(a), size=4, replace=False) for _ in range(params.iterations)])
    best_h, best_inliers = None, np.empty(0, dtype=np.intp)
    for sample in samples:
        if _has_collinear_triple(a[sample]) or _has_collinear_triple(b[sample]):
            continue
        h = fit_homography(a[sample], b[sample])
        if h is None:
            continue
        inliers = np.nonzero(transfer_error(h, a, b) < params.inlier_tolerance)[0]
        if len(inliers) > len(best_inliers):
            best_h, best_inliers = h, inliers
    if best_h is None:
        raise NoConsensus("every minimal sample was degenerate")

    refit = fit_homography(a[best_inliers], b[best_inliers])
    if refit is not None:
        refit_inliers = np.nonzero(transfer_error(refit, a, b) < params.inlier_tolerance)[0]
        if len(refit_inliers) >= len(best_inliers):
            best_h, best_inliers = refit, refit_inliers
    return MotionModel.from_matrix(best_h), best_inliers


def ransac_estimate(
    matches: list[MatchPair],
    pts_a: np.ndarray,
    pts_b: np.ndarray,
    kind: ModelKind | str = ModelKind.TRANSLATION,
    params: RansacParams | None = None,
) -> RansacResult:
    """
    Fixed-iteration RANSAC. Sample i is drawn from default_rng(seed) before any evaluation,
    so identical (matches, seed) give identical results. The best consensus (first on ties)
    is refit on its inliers and inliers are re-evaluated under the refit model.
    """
    params = params or RansacParams()
    kind = ModelKind(kind)
    need = MIN_SAMPLE[kind]
    if len(matches) < need:
        raise InsufficientMatches(f"{kind.value} needs at least {need} matches, got {len(matches)}")

    a, b = matched_points(matches, pts_a, pts_b)
    if kind is ModelKind.TRANSLATION:
        model, inliers = _ransac_translation(a, b, params)
    else:
        model, inliers = _ransac_homography(a, b, params)

    if len(inliers) < params.min_inliers:
        raise NoConsensus(f"best consensus {len(inliers)} < min_inliers {params.min_inliers}")
    logger.debug("%s: %d/%d inliers", kind.value, len(inliers), len(matches))
    return RansacResult(
        model=model,
        inlier_indices=tuple(int(i) for i in inliers),
        valid_match_count=len(inliers),
    )


def valid_match_count(result: RansacResult | None) -> int:
    return 0 if result is None else len(result.inlier_indices)


def compose(models: list[MotionModel]) -> MotionModel:
    """Chain models left to right: the result applies models[0] first."""
    out = MotionModel.identity()
    for m in models:
        out = out.then(m)
    return out


def result_to_record(result: RansacResult) -> dict:
    return {
        "model": result.model.model_dump(mode="json"),
        "inliers": list(result.inlier_indices),
        "valid_match_count": result.valid_match_count,
    }


def result_from_record(record: dict) -> RansacResult:
    return RansacResult(
        model=MotionModel.model_validate(record["model"]),
        inlier_indices=tuple(record["inliers"]),
        valid_match_count=record["valid_match_count"],
    )
