"""
Logging configuration and command logging middleware
"""

import logging
import sys
import time
from typing import Callable, Optional

from flowgraph.core.config import settings
from flowgraph.core.exceptions import FlowGraphError, ValidationError


def setup_logging(level: Optional[str] = None):
    """Setup application logging"""
    level_name = (level or settings.LOG_LEVEL).upper()
    log_level = getattr(logging, level_name, None)
    if not isinstance(log_level, int):
        raise ValidationError("unknown log level", {"level": level_name})

    # Create formatter
    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    # Repeated CLI invocations in one process must not stack handlers
    for handler in list(root_logger.handlers):
        if getattr(handler, "_flowgraph", False):
            root_logger.removeHandler(handler)

    # Setup file handler
    if settings.LOG_FILE:
        file_handler = logging.FileHandler(settings.LOG_FILE)
        file_handler.setFormatter(formatter)
        file_handler.setLevel(log_level)
        file_handler._flowgraph = True
        root_logger.addHandler(file_handler)

    # Setup console handler
    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(log_level)
    console_handler._flowgraph = True
    root_logger.addHandler(console_handler)

    # Suppress some noisy loggers
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    logging.getLogger("numba").setLevel(logging.WARNING)


class CommandLoggingMiddleware:
    """Command entry/exit logging middleware"""

    def __init__(self, handler: Callable[..., int], name: str):
        self.handler = handler
        self.name = name
        self.logger = logging.getLogger(__name__)

    def __call__(self, args) -> int:
        start_time = time.time()

        # Log command
        self.logger.info(f"Command: {self.name}")

        exit_code = 2
        try:
            exit_code = self.handler(args)
            return exit_code
        except FlowGraphError as exc:
            exit_code = exc.exit_code
            raise
        finally:
            process_time = time.time() - start_time

            # Log result
            self.logger.info(
                f"Command: {self.name} - "
                f"Exit: {exit_code} - Duration: {process_time:.3f}s"
            )
