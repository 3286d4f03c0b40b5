# AnnuStitch — Configuration
# Process-level settings (threads, logging, seed). Stage thresholds live in schemas.PipelineConfig.
import os

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


def _hardware_threads() -> int:
    return os.cpu_count() or 1


class Settings(BaseSettings):
    """Application settings; overridable via ANNUSTITCH_* environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="ANNUSTITCH_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Frame-level worker count; --threads wins over ANNUSTITCH_THREADS
    threads: int = Field(default_factory=_hardware_threads, ge=1)
    log_level: str = "INFO"

    # Seed used when neither the config file nor --seed provides one
    default_seed: int = 0
    debug_dir: str | None = None

    # Fixed salt so matplotlib SVG ids are stable between runs
    svg_hash_salt: str = "annustitch"


settings = Settings()
