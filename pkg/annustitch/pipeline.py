# AnnuStitch — Pipeline Orchestration
# Config loading (flags > file > defaults) and the end-to-end run: keyframes -> rotate -> unwrap -> AHE -> match -> RANSAC -> stitch -> report.

import json
import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from annustitch.config import settings
from annustitch.errors import ConfigError
from annustitch.evaluation import VideoEvaluation, build_report, evaluate_video
from annustitch.schemas import FrameManifest, KeyframeSelection, MatchReport, MethodVariant, PipelineConfig
from annustitch.services.features import keypoints_to_records, matches_to_records
from annustitch.services.ingest import save_gray, select_keyframes
from annustitch.services.providers import FrameSource, ManifestFrameSource
from annustitch.services.report import emit_report
from annustitch.services.robust_estimation import result_to_record
from annustitch.services.stitch import ChainBreak, Panorama, compose_segments, panorama_to_record
from annustitch.services.unwrap import spec_to_json

logger = logging.getLogger(__name__)

# strips composited into the panorama
PANORAMA_VARIANT = MethodVariant.AHE_ROTATED


def _merge(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def config_violations(err: ValidationError) -> list[dict[str, str]]:
    return [{"field": ".".join(str(p) for p in e["loc"]) or "<root>", "message": e["msg"]} for e in err.errors()]


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """
    Defaults, then the JSON file, then `overrides` (CLI flags). Every violation is collected
    into one ConfigError. A top-level `seed` replaces the RANSAC seed.
    """
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError([{"field": "<file>", "message": f"{path}: {e}"}]) from e
        if not isinstance(raw, dict):
            raise ConfigError([{"field": "<file>", "message": "top level must be a JSON object"}])
    merged = _merge(raw, overrides or {})
    try:
        config = PipelineConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(config_violations(e)) from e
    if config.seed is not None:
        config.ransac.seed = config.seed
    if config.debug_dir is None and settings.debug_dir:
        config.debug_dir = settings.debug_dir
    return config


@dataclass
class PipelineResult:
    video_id: str
    selection: KeyframeSelection
    evaluation: VideoEvaluation
    report: MatchReport
    panoramas: list[Panorama] = field(default_factory=list)
    breaks: list[ChainBreak] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)

    def summary(self) -> dict[str, Any]:
        return {
            "video_id": self.video_id,
            "keyframes": self.selection.selected_indices,
            "pairs": len(self.selection.selected_indices) - 1,
            "panoramas": len(self.panoramas),
            "chain_breaks": [{"link_index": b.link_index, "reason": b.reason} for b in self.breaks],
            "outputs": self.outputs,
        }


def read_keyframes(source: FrameSource, indices: list[int], executor: Executor) -> list:
    return list(executor.map(source.read, indices))


def stitch_variant(
    evaluation: VideoEvaluation,
    variant: MethodVariant,
    composite_source: str,
    min_inliers: int,
) -> tuple[list[Panorama], list[ChainBreak]]:
    """
    Panoramas for one variant. Frames whose strip could not be produced split the chain
    like a failed link.
    """
    frames = evaluation.frames
    links = evaluation.links[variant]
    panoramas: list[Panorama] = []
    breaks: list[ChainBreak] = []
    run: list[int] = []

    def flush():
        if not run:
            return
        strips = [(frames[i].strips if composite_source == "ahe" else frames[i].raw_strips)[variant] for i in run]
        pano, brk = compose_segments(
            strips,
            [links[i] for i in run[:-1]],
            min_inliers=min_inliers,
            frame_ids=[frames[i].frame_id for i in run],
        )
        panoramas.extend(pano)
        breaks.extend(ChainBreak(link_index=run[b.link_index], reason=b.reason) for b in brk)
        run.clear()

    for i, frame in enumerate(frames):
        if variant in frame.errors:
            for link in (i - 1, i):
                if 0 <= link < len(links):
                    breaks.append(ChainBreak(link_index=link, reason=f"no strip for {frame.frame_id}"))
            flush()
            continue
        run.append(i)
    flush()
    return panoramas, sorted(set(breaks), key=lambda b: b.link_index)


def _debug_name(frame_id: str) -> str:
    return frame_id.replace(":", "_")


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_debug(evaluation: VideoEvaluation, selection: KeyframeSelection, debug_dir: str | Path) -> None:
    """
    Intermediate outputs of every stage under `debug_dir`:
    keyframes.json, rotated/, unwrapped/<variant>/ (strip + spec), enhanced/<variant>/,
    keypoints/<variant>/ and pairs/<variant>/ (ratio matches, RANSAC record or error).
    Depth overlays are written while frames are prepared.
    """
    root = Path(debug_dir)
    _write_json(root / "keyframes.json", {"video_id": evaluation.video_id, **selection.model_dump()})
    for frame in evaluation.frames:
        name = _debug_name(frame.frame_id)
        if frame.rotation is not None:
            save_gray(root / "rotated" / f"{name}.png", frame.rotation.image)
        for variant, raw in frame.raw_strips.items():
            save_gray(root / "unwrapped" / variant.value / f"{name}.png", raw)
            (root / "unwrapped" / variant.value / f"{name}.json").write_text(
                spec_to_json(frame.specs[variant]) + "\n", encoding="utf-8"
            )
            if variant is not MethodVariant.ORIGINAL:
                save_gray(root / "enhanced" / variant.value / f"{name}.png", frame.strips[variant])
        for variant, features in frame.features.items():
            _write_json(root / "keypoints" / variant.value / f"{name}.json", keypoints_to_records(features))

    frames = evaluation.frames
    for pair in evaluation.pairs:
        _write_json(
            root / "pairs" / pair.variant.value / f"pair_{pair.pair_index:03d}.json",
            {
                "frame_a": frames[pair.pair_index].frame_id,
                "frame_b": frames[pair.pair_index + 1].frame_id,
                "matches": matches_to_records(pair.matches),
                "ransac": None if pair.result is None else result_to_record(pair.result),
                "error": None if pair.error is None else pair.error.to_dict(),
            },
        )
    logger.debug("%s: debug outputs under %s", evaluation.video_id, root)


def run_pipeline(
    config: PipelineConfig,
    manifest: FrameManifest | FrameSource,
    out_dir: str | Path,
    threads: int | None = None,
) -> PipelineResult:
    source = manifest if isinstance(manifest, FrameSource) else ManifestFrameSource(manifest)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    video_id = source.source_id

    selection = select_keyframes(source.manifest, config.ingest)
    indices = selection.selected_indices
    with ThreadPoolExecutor(max_workers=max(1, threads or settings.threads)) as pool:
        frames = read_keyframes(source, indices, pool)
        evaluation = evaluate_video(
            frames,
            config,
            video_id=video_id,
            frame_ids=[f"{video_id}_{i:05d}" for i in indices],
            executor=pool,
        )
    if config.debug_dir:
        write_debug(evaluation, selection, config.debug_dir)

    panoramas, breaks = stitch_variant(
        evaluation, PANORAMA_VARIANT, config.eval.composite_source, config.ransac.min_inliers
    )
    outputs: dict[str, str] = {}
    for k, pano in enumerate(panoramas):
        png = save_gray(out / f"panorama_{k:02d}.png", pano.canvas)
        meta = out / f"panorama_{k:02d}.json"
        meta.write_text(json.dumps(panorama_to_record(pano), indent=2) + "\n", encoding="utf-8")
        outputs[f"panorama_{k:02d}"] = str(png)

    report = build_report(evaluation.rows, config.eval.reference, config.eval.alpha)
    outputs.update({k: str(v) for k, v in emit_report(report, out).items()})
    logger.info("%s: %d panoramas, %d chain breaks", video_id, len(panoramas), len(breaks))
    return PipelineResult(
        video_id=video_id,
        selection=selection,
        evaluation=evaluation,
        report=report,
        panoramas=panoramas,
        breaks=breaks,
        outputs=outputs,
    )
