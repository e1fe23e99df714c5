import json
import logging
import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from .errors import ConfigError, InvalidSpecError
from .models import PipelineConfig, SynthSpec

logger = logging.getLogger(__name__)

ENV_WORKERS = 'FSSAM_WORKERS'
ENV_LOG_LEVEL = 'FSSAM_LOG_LEVEL'


def _load_json(path: str, error) -> Dict[str, Any]:
    try:
        with open(path, encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise error(f"{path}: invalid JSON ({e.msg} at line {e.lineno})") from e


def load_pipeline_config(path: Optional[str] = None) -> PipelineConfig:
    """
    Build a PipelineConfig from an optional JSON file and the environment.

    File values apply first, then FSSAM_WORKERS. CLI flags are applied by
    the caller on top of the returned config.
    """
    load_dotenv()
    data = _load_json(path, ConfigError) if path else {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")

    workers = os.getenv(ENV_WORKERS)
    if workers:
        try:
            data['workers'] = int(workers)
        except ValueError:
            raise ConfigError(f"{ENV_WORKERS} must be an integer, got {workers!r}")

    cfg = PipelineConfig.from_dict(data)
    logger.debug(f"Pipeline config: {cfg.to_dict()}")
    return cfg


def load_synth_spec(path: str) -> SynthSpec:
    data = _load_json(path, InvalidSpecError)
    return SynthSpec.from_dict(data)


def log_level(default: str = 'INFO') -> str:
    """Log level name from the environment"""
    load_dotenv()
    return os.getenv(ENV_LOG_LEVEL, default).upper()


def save_config(cfg: PipelineConfig, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(cfg.to_dict(), f, indent=4, sort_keys=True)
