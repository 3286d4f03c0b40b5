# AnnuStitch — Frame Sources
# FrameSource interface; stages read frames through it and never touch paths or generators directly.

from abc import ABC, abstractmethod
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from annustitch.schemas import FrameManifest
from annustitch.services.ingest import load_gray, load_manifest

if TYPE_CHECKING:
    from annustitch.services.phantom import PhantomVideo


class FrameSource(ABC):
    """Random access to the decoded frames of one video. Implementations: manifest on disk, phantom."""

    @property
    @abstractmethod
    def manifest(self) -> FrameManifest:
        ...

    @abstractmethod
    def read(self, index: int) -> np.ndarray:
        """Return frame `index` as a float64 GrayImage."""
        ...

    @property
    def source_id(self) -> str:
        return self.manifest.source_id

    def read_many(self, indices: list[int]) -> list[np.ndarray]:
        return [self.read(i) for i in indices]


class ManifestFrameSource(FrameSource):
    """Frames stored as image files listed in a JSON manifest."""

    def __init__(self, manifest: FrameManifest):
        self._manifest = manifest

    @classmethod
    def from_path(cls, path: str | Path) -> "ManifestFrameSource":
        return cls(load_manifest(path))

    @property
    def manifest(self) -> FrameManifest:
        return self._manifest

    def read(self, index: int) -> np.ndarray:
        return load_gray(self._manifest.frame_paths[index])


class PhantomFrameSource(FrameSource):
    """Synthetic video held in memory; no disk access."""

    def __init__(self, video: "PhantomVideo"):
        self._video = video
        self._manifest = FrameManifest(
            source_id=video.source_id,
            fps=video.fps,
            frame_paths=tuple(f"phantom://{video.source_id}/{i:05d}" for i in range(len(video.frames))),
        )

    @property
    def manifest(self) -> FrameManifest:
        return self._manifest

    def read(self, index: int) -> np.ndarray:
        return self._video.frames[index].astype(np.float64)


def get_frame_source(
    manifest_path: str | Path | None = None,
    *,
    phantom: "PhantomVideo | None" = None,
) -> FrameSource:
    """Factory: phantom video when given, otherwise the manifest on disk."""
    if phantom is not None:
        return PhantomFrameSource(phantom)
    if manifest_path is None:
        raise ValueError("either manifest_path or phantom is required")
    return ManifestFrameSource.from_path(manifest_path)
