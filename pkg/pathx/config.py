import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from pathx.errors import UsageError
from pathx.schemas.schemas import PipelineConfig

load_dotenv()

logger = logging.getLogger(__name__)

_PATH_FIELDS = ("tiles_dir", "clinical_csv", "vit_weights", "features_csv", "out_dir")


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="PATHX_", env_file=".env", extra="ignore")

    # Output
    out: Optional[str] = None

    # Determinism
    seed: int = 7
    workers: int = 1

    # Logging
    log_level: str = "INFO"

    # Config file looked up when --config is omitted
    config_file: str = "pathx.toml"

    def output_dir(self, override: Optional[str] = None) -> str:
        """Resolve the output directory: CLI flag, then PATHX_OUT, then ./pathx_out"""
        return override or self.out or os.path.join(os.getcwd(), "pathx_out")


@lru_cache()
def get_settings():
    return Settings()


def load_pipeline_config(path: Optional[str] = None) -> PipelineConfig:
    """
    Read a TOML pipeline config.

    Relative entries under [paths] resolve against the config file's
    directory. Without a path, ./pathx.toml is used when present, otherwise
    the defaults apply.
    """
    settings = get_settings()
    if path is None:
        if not os.path.exists(settings.config_file):
            logger.info("No config file given; using defaults")
            return PipelineConfig(seed=settings.seed, workers=settings.workers)
        path = settings.config_file

    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"cannot parse {path}: {e}")

    base = os.path.dirname(os.path.abspath(path))
    paths = raw.get("paths", {})
    for name in _PATH_FIELDS:
        value = paths.get(name)
        if isinstance(value, str) and not os.path.isabs(value):
            paths[name] = os.path.normpath(os.path.join(base, value))

    try:
        config = PipelineConfig(**raw)
    except ValidationError as e:
        raise UsageError(f"invalid config {path}: {e}")
    logger.info(f"📋 Loaded config {path} (cohort '{config.cohort}', seed {config.seed})")
    return config
