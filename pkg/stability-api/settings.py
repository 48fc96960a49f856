"""Runtime settings read from the environment (.env supported).

Env
---
STABILITY_X_MAX       blow-up guard on |x| for integrators (default 1e6)
STABILITY_THREADS     worker threads for batch operations (default 1)
STABILITY_OUTPUT_DIR  default output directory for the CLI (default "results")
STABILITY_LOG_LEVEL   logging level name (default "INFO")

Library functions never read these; the CLI and the HTTP service resolve them
once and pass values down explicitly.
"""
from __future__ import annotations

import logging
import os

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from errors import ConfigError

load_dotenv()

DEFAULT_X_MAX = 1e6

_LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class RuntimeSettings(BaseModel):
    x_max: float = Field(DEFAULT_X_MAX, gt=0)
    threads: int = Field(1, ge=1)
    output_dir: str = "results"
    log_level: str = "INFO"

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, v: str) -> str:
        name = v.upper()
        if not isinstance(logging.getLevelName(name), int):
            raise ValueError(f"unknown log level {v!r}")
        return name


def get_settings() -> RuntimeSettings:
    raw = {
        "x_max": os.getenv("STABILITY_X_MAX"),
        "threads": os.getenv("STABILITY_THREADS"),
        "output_dir": os.getenv("STABILITY_OUTPUT_DIR"),
        "log_level": os.getenv("STABILITY_LOG_LEVEL"),
    }
    try:
        return RuntimeSettings(**{k: v for k, v in raw.items() if v not in (None, "")})
    except ValidationError as e:
        raise ConfigError(f"invalid STABILITY_* environment: {e}") from e


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=_LOG_FORMAT)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(f"stability-api.{name}")
