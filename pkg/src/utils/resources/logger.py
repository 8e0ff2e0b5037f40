# /src/utils/resources/logger.py

import logging
import sys
from typing import Any, Optional

import structlog

from src.utils.config.settings import settings


class Logger:
    _logger: Optional[Any] = None

    @staticmethod
    def get_logger() -> Any:
        if Logger._logger is None:
            log_config = settings.get_logging_config()
            app_name = settings.get("app.name", "app")
            level = getattr(logging, str(log_config.get("level", "INFO")).upper(), logging.INFO)

            processors: list = [
                structlog.contextvars.merge_contextvars,
                structlog.processors.add_log_level,
            ]
            if log_config.get("timestamps", True):
                processors.append(structlog.processors.TimeStamper(fmt="iso"))
            processors += [
                structlog.processors.StackInfoRenderer(),
                structlog.processors.format_exc_info,
                structlog.dev.ConsoleRenderer(colors=False),
            ]
            structlog.configure(
                processors=processors,
                wrapper_class=structlog.make_filtering_bound_logger(level),
                logger_factory=structlog.PrintLoggerFactory(sys.stderr),
                cache_logger_on_first_use=False,
            )
            Logger._logger = structlog.get_logger(app_name)
        return Logger._logger


logger = Logger.get_logger()
