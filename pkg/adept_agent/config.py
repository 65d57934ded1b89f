"""Run configuration, config-file overrides and logging setup."""

import logging
import os
from pathlib import Path
from typing import Any, Dict, Literal, Mapping, Optional, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .agent import AUDIO_MODES, DEFAULT_MAX_CALLS

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
ENV_API_KEY = "ADEPT_API_KEY"
ENV_ENDPOINT = "ADEPT_POLICY_ENDPOINT"
ENV_MODEL = "ADEPT_MODEL"


def configure_logging(level: str = "WARNING", verbose: bool = False) -> None:
    """Configure the root logger once for CLI runs."""
    if verbose and logging.getLevelName(level.upper()) > logging.INFO:
        level = "INFO"
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, force=True)


def load_environment(dotenv_path: Optional[Union[str, Path]] = None) -> None:
    """Load credentials from a .env file without overriding the real environment."""
    load_dotenv(dotenv_path=dotenv_path, override=False)


class RunConfig(BaseModel):
    """Settings for rollouts and the end-to-end pipeline."""

    model_config = ConfigDict(extra="forbid")

    manifest: Path
    train_manifest: Optional[Path] = None
    out: Path = Path("adept_out")
    policy: str = "heuristic"
    model: Optional[str] = None
    api_key: Optional[str] = Field(default=None, repr=False, exclude=True)
    rollouts: int = Field(default=4, ge=1)
    weights: str = "B"
    seed: int = 0
    max_calls: int = Field(default=DEFAULT_MAX_CALLS, ge=0)
    refs_scope: Literal["corpus", "speaker"] = "corpus"
    lam: float = Field(default=0.5, ge=0.0, le=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    audio_mode: str = "reference"
    jobs: int = Field(default=1, ge=1)
    strict: bool = False
    allow_eval_prior: bool = False

    @field_validator("manifest", "train_manifest")
    @classmethod
    def _exists(cls, value: Optional[Path]) -> Optional[Path]:
        if value is not None and not Path(value).is_file():
            raise ValueError(f"file not found: {value}")
        return value

    @field_validator("audio_mode")
    @classmethod
    def _audio_mode(cls, value: str) -> str:
        if value not in AUDIO_MODES:
            raise ValueError(f"audio_mode must be one of {', '.join(AUDIO_MODES)}")
        return value

    @model_validator(mode="after")
    def _remote_endpoint(self):
        if self.policy == "remote":
            endpoint = os.getenv(ENV_ENDPOINT)
            if not endpoint:
                raise ValueError(f"policy 'remote' needs remote:URL or {ENV_ENDPOINT}")
            self.policy = f"remote:{endpoint}"
        return self

    @property
    def reference_manifest(self) -> Path:
        """Split the global acoustic references are built from."""
        return self.train_manifest or self.manifest


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Parse a YAML or JSON config file into a flat mapping."""
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must contain a mapping")
    return {str(k).replace("-", "_"): v for k, v in data.items()}


def build_run_config(flags: Mapping[str, Any], config_path: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Merge command-line flags with an optional config file.

    Config-file keys override flag values; flags left unset (None) fall back
    to the model defaults.

    Raises:
        ValueError: The merged settings do not validate
    """
    values = {k: v for k, v in flags.items() if v is not None}
    if config_path:
        overrides = read_config_file(config_path)
        logger.info("Config file %s overrides: %s", config_path, ", ".join(sorted(overrides)))
        values.update(overrides)
    if not values.get("api_key"):
        values["api_key"] = os.getenv(ENV_API_KEY)
    if not values.get("model") and os.getenv(ENV_MODEL):
        values["model"] = os.getenv(ENV_MODEL)
    try:
        return RunConfig(**values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ValueError(f"Invalid configuration: {problems}")
