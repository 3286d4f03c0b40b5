# AnnuStitch — Variant Evaluation
# Runs original / ahe / ahe_rotated on every adjacent keyframe pair and aggregates valid-match counts per video.

import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from annustitch.config import settings
from annustitch.errors import StageError
from annustitch.schemas import (
    VARIANT_ORDER,
    MatchPair,
    MatchReport,
    MatchRow,
    MethodVariant,
    PipelineConfig,
    RansacResult,
    UnwrapSpec,
    VariantTest,
)
from annustitch.services.depth_geometry import (
    RotationResult,
    correct_rotation,
    deepest_point,
    resolve_tau,
    write_depth_debug,
)
from annustitch.services.enhance import adaptive_hist_eq
from annustitch.services.features import KeypointSet, detect_and_describe, match_ratio
from annustitch.services.robust_estimation import ransac_estimate
from annustitch.services.unwrap import carry_annulus, make_unwrap_spec, spec_for_annulus, unwrap
from annustitch.stat_engine import ZERO_HANDLING, AllZeroDifferences, wilcoxon_signed_rank

logger = logging.getLogger(__name__)

UNIT_OF_ANALYSIS = "per_video_mean"


@dataclass
class PreparedFrame:
    """Everything the three variants derive from one keyframe."""

    frame_id: str
    strips: dict[MethodVariant, np.ndarray] = field(default_factory=dict)  # fed to detection
    raw_strips: dict[MethodVariant, np.ndarray] = field(default_factory=dict)  # before enhancement
    specs: dict[MethodVariant, UnwrapSpec] = field(default_factory=dict)
    features: dict[MethodVariant, KeypointSet] = field(default_factory=dict)
    errors: dict[MethodVariant, StageError] = field(default_factory=dict)
    rotation: RotationResult | None = None


@dataclass
class PairMatch:
    """Ratio-test matches and the RANSAC outcome of one variant on one keyframe pair."""

    pair_index: int
    variant: MethodVariant
    matches: list[MatchPair] = field(default_factory=list)
    result: RansacResult | None = None
    error: StageError | None = None


@dataclass
class VideoEvaluation:
    video_id: str
    rows: list[MatchRow]
    links: dict[MethodVariant, list[RansacResult | None]]
    frames: list[PreparedFrame]
    pairs: list[PairMatch] = field(default_factory=list)


def locate_unwrap_spec(img: np.ndarray, config: PipelineConfig) -> UnwrapSpec:
    """Annulus around the deepest point of an unrotated frame."""
    tau = resolve_tau(img, config.depth.center_tau)
    return make_unwrap_spec(img, deepest_point(img, tau), tau, config.unwrap)


def rotated_unwrap_spec(rot: RotationResult, unrotated: UnwrapSpec, config: PipelineConfig) -> UnwrapSpec:
    """Unwrap spec for the turned frame, with the annulus carried over from the unrotated one."""
    return spec_for_annulus(rot.image, carry_annulus(unrotated, rot.applied_angle, rot.image.shape), config.unwrap)


def prepare_frame(img: np.ndarray, config: PipelineConfig, frame_id: str) -> PreparedFrame:
    out = PreparedFrame(frame_id=frame_id)
    unrotated_spec = None
    try:
        unrotated_spec = locate_unwrap_spec(img, config)
        raw = unwrap(img, unrotated_spec)
        enhanced = adaptive_hist_eq(raw, config.ahe)
        for variant, strip in ((MethodVariant.ORIGINAL, raw), (MethodVariant.AHE, enhanced)):
            out.raw_strips[variant] = raw
            out.strips[variant] = strip
            out.specs[variant] = unrotated_spec
            out.features[variant] = detect_and_describe(strip, config.feature)
    except StageError as e:
        e.item_id = e.item_id or frame_id
        logger.warning("%s: unrotated variants failed: %s", frame_id, e)
        out.errors.setdefault(MethodVariant.ORIGINAL, e)
        out.errors.setdefault(MethodVariant.AHE, e)

    variant = MethodVariant.AHE_ROTATED
    try:
        if unrotated_spec is None:
            raise out.errors[MethodVariant.ORIGINAL]
        rot = correct_rotation(img, config.depth, item_id=frame_id)
        out.rotation = rot
        spec = rotated_unwrap_spec(rot, unrotated_spec, config)
        raw = unwrap(rot.image, spec)
        out.raw_strips[variant] = raw
        out.strips[variant] = adaptive_hist_eq(raw, config.ahe)
        out.specs[variant] = spec
        out.features[variant] = detect_and_describe(out.strips[variant], config.feature)
        if config.debug_dir:
            write_depth_debug(config.debug_dir, frame_id, rot, img)
    except StageError as e:
        e.item_id = e.item_id or frame_id
        logger.warning("%s: rotated variant failed: %s", frame_id, e)
        out.errors[variant] = e
    return out


def evaluate_video(
    frames: list[np.ndarray],
    config: PipelineConfig,
    video_id: str = "video",
    frame_ids: list[str] | None = None,
    threads: int | None = None,
    executor: Executor | None = None,
) -> VideoEvaluation:
    """
    Every variant sees the same keyframes, feature parameters, RANSAC parameters and seed.
    A failure on one pair becomes a zero-count row carrying the error name; the run continues.

    Frames are prepared on `executor` when one is given (`threads` is then ignored), otherwise
    on a pool of `threads` workers. A caller that already runs on a pool passes that pool here
    instead of nesting another one, and must not call this from inside one of its tasks.
    """
    if len(frames) < 2:
        raise ValueError(f"{video_id}: need at least 2 keyframes, got {len(frames)}")
    ids = frame_ids or [f"{video_id}:{i}" for i in range(len(frames))]
    if executor is None:
        scope = ThreadPoolExecutor(max_workers=max(1, threads or settings.threads))
    else:
        scope = nullcontext(executor)
    with scope as pool:
        prepared = list(pool.map(lambda args: prepare_frame(args[0], config, args[1]), zip(frames, ids)))

    rows: list[MatchRow] = []
    pairs: list[PairMatch] = []
    links: dict[MethodVariant, list[RansacResult | None]] = {v: [] for v in VARIANT_ORDER}
    for k in range(len(prepared) - 1):
        a, b = prepared[k], prepared[k + 1]
        for variant in VARIANT_ORDER:
            pair = PairMatch(pair_index=k, variant=variant)
            try:
                failed = a.errors.get(variant) or b.errors.get(variant)
                if failed is not None:
                    raise failed
                pair.matches = match_ratio(
                    a.features[variant].descriptors, b.features[variant].descriptors, config.feature.ratio
                )
                pair.result = ransac_estimate(
                    pair.matches, a.features[variant].xy, b.features[variant].xy, config.ransac.kind, config.ransac
                )
            except StageError as e:
                pair.error = e
                logger.warning("%s pair %d %s: %s", video_id, k, variant.value, e)
            pairs.append(pair)
            links[variant].append(pair.result)
            rows.append(
                MatchRow(
                    video_id=video_id,
                    variant=variant,
                    pair_index=k,
                    valid_match_count=0 if pair.result is None else pair.result.valid_match_count,
                    error=None if pair.error is None else type(pair.error).__name__,
                )
            )
    logger.info("%s: %d pairs evaluated", video_id, len(prepared) - 1)
    return VideoEvaluation(video_id=video_id, rows=rows, links=links, frames=prepared, pairs=pairs)


def run_variants(
    frames: list[np.ndarray],
    config: PipelineConfig,
    video_id: str = "video",
    executor: Executor | None = None,
) -> list[MatchRow]:
    return evaluate_video(frames, config, video_id, executor=executor).rows


def rows_frame(rows: list[MatchRow]) -> pd.DataFrame:
    df = pd.DataFrame(
        [r.model_dump(mode="json") for r in rows],
        columns=["video_id", "variant", "pair_index", "valid_match_count", "error"],
    )
    return df


def per_video_means(rows: list[MatchRow]) -> pd.DataFrame:
    """Wide table: one row per video, one column per variant."""
    df = rows_frame(rows)
    means = df.groupby(["video_id", "variant"], sort=True)["valid_match_count"].mean().unstack("variant")
    return means.reindex(columns=[v.value for v in VARIANT_ORDER])


def build_report(
    rows: list[MatchRow],
    reference: MethodVariant = MethodVariant.AHE_ROTATED,
    alpha: float = 0.05,
) -> MatchReport:
    """Per-video means and a signed-rank test of each variant against the reference over those means."""
    if not rows:
        return MatchReport(rows=(), alpha=alpha)
    means = per_video_means(rows)
    aggregates = tuple(
        (str(video), MethodVariant(variant), float(value))
        for video, row in means.iterrows()
        for variant, value in row.items()
        if not pd.isna(value)
    )

    tests = []
    for variant in VARIANT_ORDER:
        if variant is reference:
            continue
        paired = means[[variant.value, reference.value]].dropna()
        n = len(paired)
        if n == 0:
            tests.append(VariantTest(variant=variant, reference=reference, n=0, note="no paired videos"))
            continue
        try:
            res = wilcoxon_signed_rank(paired[variant.value].to_numpy(), paired[reference.value].to_numpy())
        except AllZeroDifferences:
            tests.append(VariantTest(variant=variant, reference=reference, n=0, note="all differences zero"))
            continue
        tests.append(
            VariantTest(
                variant=variant,
                reference=reference,
                n=res.n,
                statistic=res.statistic,
                p_value=res.p_value,
                significant=res.p_value < alpha,
                note=f"{res.method}; {res.zeros_discarded} zero differences discarded ({ZERO_HANDLING})",
            )
        )
    return MatchReport(rows=tuple(rows), aggregates=aggregates, test_results=tuple(tests), alpha=alpha)
