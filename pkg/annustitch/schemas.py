# AnnuStitch — Schemas
# Parameter models for every stage, the record types they exchange, and the pipeline config file.
import math
from enum import Enum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class _Section(BaseModel):
    """Config sections reject unknown keys so typos surface as validation errors."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)


# ---------------------------------------------------------------------------
# ingest


class FrameManifest(_Frozen):
    """Decoded frames of one video, in capture order."""

    source_id: str = Field(..., min_length=1)
    fps: float = Field(..., description="Frames per second; must be > 0 for keyframe selection.")
    frame_paths: tuple[str, ...] = Field(default_factory=tuple)

    @field_validator("frame_paths")
    @classmethod
    def _unique_paths(cls, v: tuple[str, ...]) -> tuple[str, ...]:
        if len(set(v)) != len(v):
            raise ValueError("frame paths must be unique")
        return v

    @property
    def frame_count(self) -> int:
        return len(self.frame_paths)

    @property
    def duration(self) -> float:
        return self.frame_count / self.fps if self.fps > 0 else 0.0


class KeyframeSelection(_Section):
    head_trim: float = Field(3.0, ge=0, description="Seconds dropped at the start.")
    tail_trim: float = Field(3.0, ge=0, description="Seconds dropped at the end.")
    stride: int = Field(5, ge=1, description="Keep one frame every `stride` frames.")
    selected_indices: list[int] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# depth_geometry


class Ellipse(_Frozen):
    center: tuple[float, float]
    semi_major: float = Field(..., gt=0)
    semi_minor: float = Field(..., gt=0)
    angle: float = Field(..., ge=0, lt=math.pi, description="Major-axis direction, radians.")

    @model_validator(mode="after")
    def _axes_ordered(self) -> "Ellipse":
        if self.semi_major < self.semi_minor:
            raise ValueError("semi_major must be >= semi_minor")
        if not all(math.isfinite(c) for c in self.center):
            raise ValueError("center must be finite")
        return self

    @property
    def axis_ratio(self) -> float:
        return self.semi_major / self.semi_minor

    def is_ambiguous(self, ratio: float) -> bool:
        """Near-circular ellipses have no meaningful orientation."""
        return self.axis_ratio < ratio


class DepthParams(_Section):
    # None = Otsu threshold computed per frame
    rotation_tau: float | None = Field(None, ge=0, le=255)
    center_tau: float | None = Field(None, ge=0, le=255)
    circle_ambiguity_ratio: float = Field(1.05, ge=1.0)


# ---------------------------------------------------------------------------
# unwrap


class UnwrapParams(_Section):
    # None = auto: n_theta = round(2*pi*r_max), n_r = round(r_max - r_min)
    n_theta: int | None = Field(None, ge=8)
    n_r: int | None = Field(None, ge=2)
    r_min: float | None = Field(None, ge=0)
    r_max: float | None = Field(None, gt=0)
    theta_origin: float = Field(0.0, description="Angle of column 0, radians from +x.")


class UnwrapSpec(_Frozen):
    center: tuple[float, float]
    r_min: float = Field(..., ge=0)
    r_max: float = Field(..., gt=0)
    n_theta: int = Field(..., ge=8)
    n_r: int = Field(..., ge=2)
    theta_origin: float = 0.0

    @model_validator(mode="after")
    def _radii_ordered(self) -> "UnwrapSpec":
        if not self.r_min < self.r_max:
            raise ValueError("r_min must be < r_max")
        return self

    def radii(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_r)

    def thetas(self) -> np.ndarray:
        return self.theta_origin + np.arange(self.n_theta) * (2.0 * math.pi / self.n_theta)


class Annulus(_Frozen):
    """Unwrap centre and radii fixed ahead of sampling, e.g. carried onto a rotated frame."""

    center: tuple[float, float]
    r_min: float = Field(..., ge=0)
    r_max: float = Field(..., gt=0)


# ---------------------------------------------------------------------------
# enhance


class AheParams(_Section):
    tiles_x: int = Field(8, ge=1)
    tiles_y: int = Field(8, ge=1)
    # Multiple of the uniform bin height; 0 disables clipping
    clip_limit: float = Field(2.0, ge=0)
    bins: int = Field(256, ge=1, le=256)


# ---------------------------------------------------------------------------
# features


class FeatureParams(_Section):
    octaves: int = Field(4, ge=1)
    scales_per_octave: int = Field(3, ge=1)
    contrast_threshold: float = Field(0.03, gt=0, description="On [0, 1] intensities.")
    edge_ratio_threshold: float = Field(10.0, gt=0)
    ratio: float = Field(0.75, gt=0, lt=1, description="Ratio-test bound on d1/d2.")
    sigma: float = Field(1.6, gt=0)
    assumed_blur: float = Field(0.5, ge=0)


class Keypoint(_Frozen):
    x: float
    y: float
    sigma: float = Field(..., gt=0)
    orientation: float = Field(..., ge=0, lt=2 * math.pi)
    response: float


class MatchPair(_Frozen):
    index_a: int = Field(..., ge=0)
    index_b: int = Field(..., ge=0)
    d1: float = Field(..., ge=0)
    d2: float = Field(..., ge=0)

    @model_validator(mode="after")
    def _ordered(self) -> "MatchPair":
        if self.d1 > self.d2:
            raise ValueError("d1 must be <= d2")
        return self


# ---------------------------------------------------------------------------
# robust_estimation


class ModelKind(str, Enum):
    TRANSLATION = "translation"
    HOMOGRAPHY = "homography"


class RansacParams(_Section):
    kind: ModelKind = ModelKind.TRANSLATION
    iterations: int = Field(2000, ge=1)
    inlier_tolerance: float = Field(3.0, gt=0)
    seed: int = Field(0, ge=-(2**63), lt=2**64)
    min_inliers: int = Field(4, ge=1)


class MotionModel(_Frozen):
    """Maps points of strip A onto strip B: b = T(a)."""

    kind: ModelKind
    translation: tuple[float, float] | None = None
    h: tuple[tuple[float, float, float], ...] | None = None

    @model_validator(mode="after")
    def _payload_matches_kind(self) -> "MotionModel":
        if self.kind is ModelKind.TRANSLATION:
            if self.translation is None or not all(math.isfinite(v) for v in self.translation):
                raise ValueError("translation model needs finite (dx, dy)")
        else:
            if self.h is None or len(self.h) != 3:
                raise ValueError("homography model needs a 3x3 matrix")
            m = np.asarray(self.h, dtype=float)
            if not np.all(np.isfinite(m)) or abs(np.linalg.det(m)) < 1e-12:
                raise ValueError("homography must be finite and invertible")
        return self

    @classmethod
    def identity(cls) -> "MotionModel":
        return cls(kind=ModelKind.TRANSLATION, translation=(0.0, 0.0))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "MotionModel":
        m = np.asarray(m, dtype=float)
        m = m / m[2, 2]
        if np.allclose(m[:2, :2], np.eye(2), atol=1e-12) and np.allclose(m[2, :2], 0.0, atol=1e-15):
            return cls(kind=ModelKind.TRANSLATION, translation=(float(m[0, 2]), float(m[1, 2])))
        return cls(kind=ModelKind.HOMOGRAPHY, h=tuple(tuple(float(v) for v in row) for row in m))

    def as_matrix(self) -> np.ndarray:
        if self.kind is ModelKind.TRANSLATION:
            dx, dy = self.translation
            return np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])
        return np.asarray(self.h, dtype=float)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        if self.kind is ModelKind.TRANSLATION:
            return pts + np.asarray(self.translation)
        q = np.c_[pts, np.ones(len(pts))] @ self.as_matrix().T
        return q[:, :2] / q[:, 2:3]

    def inverse(self) -> "MotionModel":
        if self.kind is ModelKind.TRANSLATION:
            dx, dy = self.translation
            return MotionModel(kind=ModelKind.TRANSLATION, translation=(-dx, -dy))
        return MotionModel.from_matrix(np.linalg.inv(self.as_matrix()))

    def then(self, other: "MotionModel") -> "MotionModel":
        """Composition: apply self, then other."""
        if self.kind is ModelKind.TRANSLATION and other.kind is ModelKind.TRANSLATION:
            return MotionModel(
                kind=ModelKind.TRANSLATION,
                translation=(
                    self.translation[0] + other.translation[0],
                    self.translation[1] + other.translation[1],
                ),
            )
        return MotionModel.from_matrix(other.as_matrix() @ self.as_matrix())


class RansacResult(_Frozen):
    model: MotionModel
    inlier_indices: tuple[int, ...]
    valid_match_count: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _count_matches_inliers(self) -> "RansacResult":
        if self.valid_match_count != len(self.inlier_indices):
            raise ValueError("valid_match_count must equal the number of inliers")
        return self


# ---------------------------------------------------------------------------
# eval_report


class MethodVariant(str, Enum):
    ORIGINAL = "original"
    AHE = "ahe"
    AHE_ROTATED = "ahe_rotated"


VARIANT_ORDER: tuple[MethodVariant, ...] = (
    MethodVariant.ORIGINAL,
    MethodVariant.AHE,
    MethodVariant.AHE_ROTATED,
)


class MatchRow(_Frozen):
    video_id: str
    variant: MethodVariant
    pair_index: int = Field(..., ge=0)
    valid_match_count: int = Field(..., ge=0)
    error: str | None = None


class VariantTest(_Frozen):
    variant: MethodVariant
    reference: MethodVariant
    n: int = Field(..., ge=0)
    statistic: float | None = None
    p_value: float | None = Field(None, ge=0, le=1)
    significant: bool = False
    note: str | None = None

    @model_validator(mode="after")
    def _flag_matches_p(self) -> "VariantTest":
        if self.p_value is None and self.significant:
            raise ValueError("significant requires a p-value")
        return self


class MatchReport(_Frozen):
    rows: tuple[MatchRow, ...]
    aggregates: tuple[tuple[str, MethodVariant, float], ...] = ()
    test_results: tuple[VariantTest, ...] = ()
    alpha: float = 0.05


class EvalParams(_Section):
    reference: MethodVariant = MethodVariant.AHE_ROTATED
    alpha: float = Field(0.05, gt=0, lt=1)
    composite_source: Literal["ahe", "original"] = "ahe"


# ---------------------------------------------------------------------------
# pipeline config file


class PipelineConfig(_Section):
    ingest: KeyframeSelection = Field(default_factory=KeyframeSelection)
    depth: DepthParams = Field(default_factory=DepthParams)
    unwrap: UnwrapParams = Field(default_factory=UnwrapParams)
    ahe: AheParams = Field(default_factory=AheParams)
    feature: FeatureParams = Field(default_factory=FeatureParams)
    ransac: RansacParams = Field(default_factory=RansacParams)
    eval: EvalParams = Field(default_factory=EvalParams)
    seed: int | None = Field(None, ge=-(2**63), lt=2**64)
    debug_dir: str | None = None

    def effective_seed(self, fallback: int) -> int:
        return self.seed if self.seed is not None else fallback
