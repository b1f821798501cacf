from functools import lru_cache

from dotenv import load_dotenv
from loguru import logger
from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

load_dotenv()


class Engine_settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="FLOWCONN_", extra="ignore")

    threads: int | None = Field(default=None, ge=1)
    chunk_paths: int = Field(default=1024, ge=2, multiple_of=2)

    membership_tol: float = 1e-8
    capture_radius: float = 1.0
    fd_step: float = 1e-5
    newton_tol: float = 1e-12
    newton_max_iter: int = 100

    bias_constant: float = 10.0
    oracle_tol: float = 1e-10
    analytic_tol: float = 1e-9
    fd_tol: float = 1e-5

    log_level: str = "INFO"
    log_file: str | None = None


@lru_cache
def get_engine_settings():
    """Get settings"""
    logger.info("Loading engine settings from the environment...")
    return Engine_settings()
