"""Shared fixtures: small synthetic frames, manifests on disk and a default config."""

from pathlib import Path

import cv2
import numpy as np
import pytest

from annustitch.schemas import PipelineConfig
from annustitch.services.ingest import save_gray, write_manifest


def render_dark_ellipse(
    shape: tuple[int, int],
    center: tuple[float, float],
    a: float,
    b: float,
    angle_deg: float,
    inside: float = 10.0,
    outside: float = 200.0,
) -> np.ndarray:
    """Bright frame with a filled dark ellipse; angle measured from +x towards +y (image down)."""
    img = np.full(shape, outside, dtype=np.uint8)
    cv2.ellipse(
        img,
        (int(round(center[0])), int(round(center[1]))),
        (int(round(a)), int(round(b))),
        angle_deg,
        0,
        360,
        color=int(inside),
        thickness=-1,
    )
    return img.astype(np.float64)


def textured(shape: tuple[int, int], seed: int = 0, smooth: float = 2.0) -> np.ndarray:
    """Band-limited random texture scaled to [20, 235]."""
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=shape).astype(np.float32)
    blurred = cv2.GaussianBlur(noise, (0, 0), smooth).astype(np.float64)
    blurred -= blurred.min()
    blurred /= blurred.max()
    return 20.0 + 215.0 * blurred


@pytest.fixture
def config() -> PipelineConfig:
    return PipelineConfig()


@pytest.fixture
def frame_dir(tmp_path: Path):
    """Factory writing `frames` as PNGs plus a manifest.json; returns the manifest path."""

    def _make(frames: list[np.ndarray], fps: float = 10.0, source_id: str = "clip") -> Path:
        names = []
        for i, frame in enumerate(frames):
            name = f"frame_{i:05d}.png"
            save_gray(tmp_path / source_id / name, frame)
            names.append(name)
        return write_manifest(tmp_path / source_id / "manifest.json", source_id, fps, names)

    return _make
