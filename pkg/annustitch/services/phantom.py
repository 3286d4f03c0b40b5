# AnnuStitch — Synthetic Tube Phantom
# Seeded low-contrast endoscopic sequences: elliptic dark lumen, faint mucosal texture, camera roll, axial advance.

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import ndimage

from annustitch.services.ingest import save_gray, to_uint8, write_manifest

logger = logging.getLogger(__name__)


class PhantomParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = Field(160, ge=64)
    height: int = Field(160, ge=64)
    fps: float = Field(10.0, gt=0)
    n_frames: int = Field(110, ge=2)
    lumen_semi_major: float = Field(26.0, gt=0)
    lumen_semi_minor: float = Field(16.0, gt=0)
    lumen_level: float = Field(10.0, ge=0, le=255)
    wall_level: float = Field(130.0, ge=0, le=255)
    # texture terms are in gray levels
    mucosa_density: float = Field(6.7, ge=0, description="Faint blobs per 1000 texture px.")
    mucosa_contrast: tuple[float, float] = (25.0, 65.0)
    mucosa_sigma: tuple[float, float] = (2.0, 3.2)
    landmark_density: float = Field(0.4, ge=0, description="Bright blobs per 1000 texture px.")
    landmark_contrast: tuple[float, float] = (90.0, 110.0)
    landmark_sigma: tuple[float, float] = (2.5, 3.5)
    texture_floor: float = Field(-50.0, le=0, description="Darkest texture deviation; keeps the wall above the lumen.")
    sinusoid_amplitude: float = Field(4.0, ge=0)
    sinusoid_cycles: int = Field(5, ge=0)
    lowpass_std: float = Field(3.0, ge=0)
    texture_correlation: float = Field(2.5, gt=0, description="Low-pass grain, texture-grid cells.")
    noise_sigma: float = Field(1.5, ge=0)
    roll_amplitude_deg: float = Field(75.0, ge=0)
    roll_jitter_deg: float = Field(10.0, ge=0)
    roll_period_frames: float = Field(12.5, gt=0)
    advance_per_frame: float = Field(0.8, ge=0, description="Axial advance, px per frame.")

    @model_validator(mode="after")
    def _roll_within_half_turn(self) -> "PhantomParams":
        # the lumen axis is only known mod pi
        if self.roll_amplitude_deg + self.roll_jitter_deg >= 90:
            raise ValueError("roll_amplitude_deg + roll_jitter_deg must stay below 90")
        for name in ("mucosa_contrast", "mucosa_sigma", "landmark_contrast", "landmark_sigma"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must be an ordered non-negative range")
        return self


# periodic texture grid: rows follow radius (1 px per row), columns follow angle
_TEXTURE_ROWS = 256
_TEXTURE_COLS = 512


@dataclass(frozen=True)
class PhantomVideo:
    source_id: str
    fps: float
    frames: list[np.ndarray]
    rolls: np.ndarray  # radians, per frame
    advances: np.ndarray  # px, per frame


def _add_blobs(
    texture: np.ndarray,
    rng: np.random.Generator,
    density: float,
    contrast: tuple[float, float],
    sigma: tuple[float, float],
    signed: bool,
) -> None:
    """Gaussian blobs drawn into wrapped local patches of `texture`, in place."""
    n = int(round(density * texture.size / 1000.0))
    for _ in range(n):
        cy, cx = rng.uniform(0, _TEXTURE_ROWS), rng.uniform(0, _TEXTURE_COLS)
        s = rng.uniform(*sigma)
        c = rng.uniform(*contrast)
        if signed and rng.random() < 0.5:
            c = -c
        half = int(math.ceil(4 * s))
        ry = np.arange(int(cy) - half, int(cy) + half + 2)
        rx = np.arange(int(cx) - half, int(cx) + half + 2)
        g = np.exp(-((ry[:, None] - cy) ** 2 + (rx[None, :] - cx) ** 2) / (2 * s * s))
        texture[np.ix_(ry % _TEXTURE_ROWS, rx % _TEXTURE_COLS)] += c * g


def periodic_texture(rng: np.random.Generator, params: PhantomParams) -> np.ndarray:
    """
    Wall deviation in gray levels, periodic in both axes: dense faint mucosal blobs that need
    contrast enhancement to be detected, sparse bright landmarks that do not, a faint sinusoid
    and smooth low-pass noise. Zero mean before the floor clip.
    """
    noise = rng.standard_normal((_TEXTURE_ROWS, _TEXTURE_COLS))
    fy = np.fft.fftfreq(_TEXTURE_ROWS)[:, None]
    fx = np.fft.fftfreq(_TEXTURE_COLS)[None, :]
    lowpass = np.exp(-2.0 * (math.pi * params.texture_correlation) ** 2 * (fx**2 + fy**2))
    base = np.real(np.fft.ifft2(np.fft.fft2(noise) * lowpass))
    base *= params.lowpass_std / max(float(base.std()), 1e-12)

    cols = np.arange(_TEXTURE_COLS)[None, :]
    rows = np.arange(_TEXTURE_ROWS)[:, None]
    sinusoid = params.sinusoid_amplitude * np.sin(
        2 * math.pi * params.sinusoid_cycles * cols / _TEXTURE_COLS + 2 * math.pi * 4 * rows / _TEXTURE_ROWS
    )

    blobs = np.zeros_like(base)
    _add_blobs(blobs, rng, params.mucosa_density, params.mucosa_contrast, params.mucosa_sigma, signed=True)
    _add_blobs(blobs, rng, params.landmark_density, params.landmark_contrast, params.landmark_sigma, signed=False)

    texture = base + sinusoid + blobs
    texture -= texture.mean()
    return np.maximum(texture, params.texture_floor)


def roll_track(rng: np.random.Generator, params: PhantomParams) -> np.ndarray:
    """Oscillating twist with per-frame jitter, radians; |roll| < 90 deg."""
    t = np.arange(params.n_frames)
    phase = rng.uniform(0, 2 * math.pi)
    twist = params.roll_amplitude_deg * np.sin(2 * math.pi * t / params.roll_period_frames + phase)
    jitter = rng.uniform(-params.roll_jitter_deg, params.roll_jitter_deg, size=params.n_frames)
    return np.radians(twist + jitter)


def render_frame(
    texture: np.ndarray,
    roll: float,
    advance: float,
    params: PhantomParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """One frame: the tube wall sampled at (radius + advance, angle - roll) around the image centre."""
    h, w = params.height, params.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - (w - 1) / 2.0, yy - (h - 1) / 2.0
    r = np.hypot(dx, dy)
    phi = np.arctan2(dy, dx)

    rows = r + advance
    cols = np.mod(phi - roll, 2 * math.pi) * _TEXTURE_COLS / (2 * math.pi)
    wall = params.wall_level + ndimage.map_coordinates(texture, [rows, cols], order=1, mode="grid-wrap")

    # lumen major axis points down the image before roll
    alpha = math.pi / 2 + roll
    u = (dx * math.cos(alpha) + dy * math.sin(alpha)) / params.lumen_semi_major
    v = (-dx * math.sin(alpha) + dy * math.cos(alpha)) / params.lumen_semi_minor
    frame = np.where(u * u + v * v <= 1.0, params.lumen_level, wall)
    if params.noise_sigma > 0:
        frame = frame + rng.normal(0.0, params.noise_sigma, frame.shape)
    return to_uint8(frame)


def generate_phantom_video(params: PhantomParams | None = None, seed: int = 0, source_id: str | None = None) -> PhantomVideo:
    params = params or PhantomParams()
    rng = np.random.default_rng(seed % 2**64)
    texture = periodic_texture(rng, params)
    rolls = roll_track(rng, params)
    advances = params.advance_per_frame * np.arange(params.n_frames)
    frames = [render_frame(texture, rolls[i], advances[i], params, rng) for i in range(params.n_frames)]
    sid = source_id or f"phantom_{seed}"
    logger.info("generated %s: %d frames %dx%d", sid, params.n_frames, params.width, params.height)
    return PhantomVideo(source_id=sid, fps=params.fps, frames=frames, rolls=rolls, advances=advances)


def write_phantom_video(video: PhantomVideo, out_dir: str | Path) -> Path:
    """PNG frames plus manifest.json under out_dir/<source_id>/; returns the manifest path."""
    root = Path(out_dir) / video.source_id
    names = []
    for i, frame in enumerate(video.frames):
        name = f"frame_{i:05d}.png"
        save_gray(root / name, frame)
        names.append(name)
    return write_manifest(root / "manifest.json", video.source_id, video.fps, names)


def generate_phantom_dataset(
    out_dir: str | Path,
    n_videos: int = 20,
    seed: int = 0,
    params: PhantomParams | None = None,
) -> list[Path]:
    manifests = []
    for i in range(n_videos):
        video = generate_phantom_video(params, seed=seed * 1000 + i, source_id=f"phantom_{i:02d}")
        manifests.append(write_phantom_video(video, out_dir))
    return manifests
