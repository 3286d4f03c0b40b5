# AnnuStitch — Frame Ingestion
# Manifest loading, keyframe selection over trimmed video, and 8-bit PNG read/write as float grayscale.

import json
import logging
import math
from pathlib import Path

import cv2
import numpy as np
from pydantic import ValidationError

from annustitch.errors import StageError
from annustitch.schemas import FrameManifest, KeyframeSelection

logger = logging.getLogger(__name__)

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


class IngestError(StageError):
    stage = "ingest"


class VideoTooShort(IngestError):
    pass


class InvalidFps(IngestError):
    pass


class DecodeError(IngestError):
    pass


def select_keyframes(manifest: FrameManifest, params: KeyframeSelection) -> KeyframeSelection:
    """
    Drop `head_trim` seconds at the start and `tail_trim` seconds at the end, then keep
    every `stride`-th frame of what remains, starting at the first kept frame.
    Trim boundaries round up: first_kept = ceil(head * fps), last_kept = N - 1 - ceil(tail * fps).
    """
    if not manifest.fps > 0 or not math.isfinite(manifest.fps):
        raise InvalidFps(f"fps must be > 0, got {manifest.fps}", item_id=manifest.source_id)
    n = manifest.frame_count
    if manifest.duration <= params.head_trim + params.tail_trim:
        raise VideoTooShort(
            f"{n} frames at {manifest.fps:g} fps ({manifest.duration:.3f} s) "
            f"do not outlast trims {params.head_trim:g} s + {params.tail_trim:g} s",
            item_id=manifest.source_id,
        )
    first_kept = math.ceil(params.head_trim * manifest.fps)
    last_kept = n - 1 - math.ceil(params.tail_trim * manifest.fps)
    if first_kept > last_kept:
        raise VideoTooShort(
            f"no frame left between index {first_kept} and {last_kept}",
            item_id=manifest.source_id,
        )
    indices = list(range(first_kept, last_kept + 1, params.stride))
    logger.info("%s: %d keyframes from %d frames", manifest.source_id, len(indices), n)
    return params.model_copy(update={"selected_indices": indices})


def validate_gray(arr: np.ndarray) -> np.ndarray:
    """Return `arr` as a float64 2-D array with finite values in [0, 255], or raise ValueError."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError(f"expected a non-empty 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0 or img.max() > 255:
        raise ValueError(f"image values outside [0, 255]: [{img.min()}, {img.max()}]")
    return img


def decode_gray(data: bytes, *, item_id: str | None = None) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8)
    raw = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED) if buf.size else None
    if raw is None:
        raise DecodeError("unreadable or truncated image", item_id=item_id)
    if raw.dtype != np.uint8:
        raise DecodeError(f"unsupported sample type {raw.dtype}; 8-bit expected", item_id=item_id)
    if raw.ndim == 2:
        return raw.astype(np.float64)
    if raw.ndim == 3 and raw.shape[2] in (3, 4):
        # OpenCV channel order is BGR(A); alpha is ignored
        rgb = raw[:, :, 2::-1].astype(np.float64)
        return rgb @ LUMA_WEIGHTS
    raise DecodeError(f"unsupported image layout {raw.shape}", item_id=item_id)


def load_gray(path: str | Path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB(A) image file as a float64 GrayImage."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise DecodeError(f"cannot read {path}: {e}", item_id=str(path)) from e
    return decode_gray(data, item_id=str(path))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def save_gray(path: str | Path, img: np.ndarray) -> Path:
    """Write a GrayImage as an 8-bit PNG (values rounded and clipped)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ok, buf = cv2.imencode(".png", to_uint8(img))
    if not ok:
        raise IngestError(f"PNG encoding failed for {path}", item_id=str(path))
    path.write_bytes(buf.tobytes())
    return path


def load_manifest(path: str | Path) -> FrameManifest:
    """
    Read a video manifest: {"source_id": ..., "fps": ..., "frames": [relative paths]}.
    Frame paths are resolved against the manifest's directory.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise IngestError(f"cannot read manifest {path}: {e}", item_id=str(path)) from e
    base = path.parent
    try:
        return FrameManifest(
            source_id=raw.get("source_id") or path.stem,
            fps=raw.get("fps", 0),
            frame_paths=tuple(str(base / p) for p in raw.get("frames", [])),
        )
    except ValidationError as e:
        raise IngestError(f"invalid manifest {path}: {e.errors()[0]['msg']}", item_id=str(path)) from e


def write_manifest(path: str | Path, source_id: str, fps: float, frames: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"source_id": source_id, "fps": fps, "frames": frames}
    path.write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
    return path
