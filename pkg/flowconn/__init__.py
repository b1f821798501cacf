from loguru import logger
import sys
from flowconn.config import get_engine_settings

settings = get_engine_settings()

logger.remove()
logger.add(
    sink=sys.stderr,
    level=settings.log_level,
    colorize=True,
    format="{time:DD.MM.YY - HH:mm:ss} | <level>{level}</level> | <yellow>{file}</yellow> : <cyan>{line}</cyan> | {message}",
)
if settings.log_file:
    logger.add(
        settings.log_file,
        rotation="10 MB",
        retention="2 days",
        compression="zip",
        level=settings.log_level,
        format="{time:DD.MM.YY - HH:mm:ss} | {level} | {file}:{line} | {message}",
    )

__all__ = ["logger", "settings"]
