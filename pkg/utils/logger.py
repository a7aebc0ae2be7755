import logging
import os
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

# Every engine logger hangs below this one so a run log can capture all of them.
ROOT_LOGGER_NAME = "eeg_engine"


def _resolve_level(log_level: Optional[int]) -> int:
    if log_level is not None:
        return log_level
    env_level = os.environ.get("LOG_LEVEL", "INFO").upper()
    level = getattr(logging, env_level, None)
    return level if isinstance(level, int) else logging.INFO


def get_logger(name: str, log_level: Optional[int] = None) -> logging.Logger:
    """
    Configure and return a logger below the engine's root logger.

    Args:
        name: Logger name, typically __name__ of the calling module
        log_level: Optional override for log level, uses LOG_LEVEL or INFO by default

    Returns:
        A configured logger instance
    """
    root = logging.getLogger(ROOT_LOGGER_NAME)

    # Only configure the shared handler once
    if not root.handlers:
        level = _resolve_level(log_level)
        root.setLevel(level)
        root.propagate = False

        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setLevel(level)
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
        root.addHandler(console_handler)

    if name == ROOT_LOGGER_NAME or name.startswith(ROOT_LOGGER_NAME + "."):
        return logging.getLogger(name)
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


def attach_run_log(out_dir: str, filename: str = "run.log") -> logging.Handler:
    """Mirror all engine log records into a file inside a run directory.

    Args:
        out_dir: Run output directory (must exist)
        filename: Log file name inside the directory

    Returns:
        The attached handler, to be passed to detach_run_log when the run ends
    """
    root = logging.getLogger(ROOT_LOGGER_NAME)
    if not root.handlers:
        get_logger(ROOT_LOGGER_NAME)

    file_handler = logging.FileHandler(os.path.join(out_dir, filename), encoding="utf-8")
    file_handler.setLevel(root.level)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT))
    root.addHandler(file_handler)
    return file_handler


def detach_run_log(handler: logging.Handler) -> None:
    root = logging.getLogger(ROOT_LOGGER_NAME)
    root.removeHandler(handler)
    handler.close()
