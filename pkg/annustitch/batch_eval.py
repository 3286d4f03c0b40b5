# AnnuStitch — Batch Evaluation Runner
# Evaluate every video manifest under a directory; a video that fails is logged and skipped, never fatal.

import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from annustitch.config import settings
from annustitch.errors import StageError
from annustitch.evaluation import build_report, evaluate_video
from annustitch.schemas import MatchReport, MatchRow, PipelineConfig
from annustitch.services.ingest import select_keyframes
from annustitch.services.providers import ManifestFrameSource
from annustitch.services.report import emit_report

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class BatchResult:
    report: MatchReport
    videos: list[str] = field(default_factory=list)
    skipped: list[dict[str, str | None]] = field(default_factory=list)
    outputs: dict[str, str] = field(default_factory=dict)


def find_manifests(manifest_dir: str | Path) -> list[Path]:
    """Every manifest.json below `manifest_dir`, in sorted path order."""
    return sorted(Path(manifest_dir).rglob(MANIFEST_NAME))


def _evaluate_manifest(path: Path, config: PipelineConfig, pool: Executor) -> list[MatchRow]:
    source = ManifestFrameSource.from_path(path)
    selection = select_keyframes(source.manifest, config.ingest)
    indices = selection.selected_indices
    frames = list(pool.map(source.read, indices))
    ids = [f"{source.source_id}_{i:05d}" for i in indices]
    return evaluate_video(frames, config, video_id=source.source_id, frame_ids=ids, executor=pool).rows


def run_batch_eval(
    manifest_dir: str | Path,
    config: PipelineConfig,
    out_dir: str | Path | None = None,
    threads: int | None = None,
) -> BatchResult:
    """
    Videos are evaluated one after another on a single pool of `threads` workers shared by
    their frames; results follow manifest order, so the report does not depend on the thread count.
    """
    manifests = find_manifests(manifest_dir)
    if not manifests:
        raise ValueError(f"no {MANIFEST_NAME} under {manifest_dir}")

    results = []
    with ThreadPoolExecutor(max_workers=max(1, threads or settings.threads)) as pool:
        for path in manifests:
            try:
                results.append((path, _evaluate_manifest(path, config, pool), None))
            except (StageError, ValueError) as e:
                logger.warning("skipping %s: %s", path, e)
                results.append((path, None, e))

    rows: list[MatchRow] = []
    videos: list[str] = []
    skipped: list[dict[str, str | None]] = []
    for path, video_rows, error in results:
        if error is not None:
            entry = error.to_dict() if isinstance(error, StageError) else {"error": type(error).__name__, "message": str(error)}
            skipped.append({"manifest": str(path), **entry})
            continue
        rows.extend(video_rows)
        videos.append(video_rows[0].video_id)

    report = build_report(rows, config.eval.reference, config.eval.alpha)
    outputs: dict[str, str] = {}
    if out_dir is not None and rows:
        outputs = {k: str(v) for k, v in emit_report(report, out_dir).items()}
    logger.info("batch: %d videos evaluated, %d skipped", len(videos), len(skipped))
    return BatchResult(report=report, videos=videos, skipped=skipped, outputs=outputs)
