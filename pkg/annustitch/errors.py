# AnnuStitch — Error hierarchy
# Stage errors carry the stage name and the frame/pair they concern so batch runs can report and continue.


class AnnustitchError(Exception):
    """Base class for every error raised by the pipeline."""


class StageError(AnnustitchError):
    """An error raised by one pipeline stage, optionally tied to a frame or pair id."""

    stage: str = "pipeline"

    def __init__(self, message: str, *, item_id: str | None = None):
        super().__init__(message)
        self.item_id = item_id

    def to_dict(self) -> dict[str, str | None]:
        return {
            "stage": self.stage,
            "item_id": self.item_id,
            "error": type(self).__name__,
            "message": str(self),
        }


class ConfigError(AnnustitchError):
    """Raised when a PipelineConfig fails validation. Holds every violation at once."""

    def __init__(self, violations: list[dict[str, str]]):
        self.violations = violations
        joined = "; ".join(f"{v['field']}: {v['message']}" for v in violations)
        super().__init__(f"invalid configuration: {joined}")

    def to_dict(self) -> dict:
        return {"error": "ConfigError", "violations": self.violations}
