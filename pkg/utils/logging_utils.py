"""
Logging utilities for nvdephase.
"""
import logging
from pathlib import Path
from typing import Optional, Union

from utils.config import LOG_DIR, LOG_LEVEL, LOG_TO_FILE

def setup_logger(name: str, log_file: str, level: Optional[Union[int, str]] = None):
    """
    Set up a logger with file and console handlers.

    Args:
        name: Name of the logger.
        log_file: File name of the log, created inside the configured log directory.
        level: Logging level. Defaults to NVDEPH_LOG_LEVEL.

    Returns:
        A configured logger instance.
    """
    logger = logging.getLogger(name)
    logger.setLevel(level if level is not None else LOG_LEVEL)

    # Handlers are attached once per logger name
    if logger.handlers:
        return logger
    logger.propagate = False

    if LOG_TO_FILE:
        # Ensure the logs directory exists
        log_dir = Path(LOG_DIR)
        log_dir.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_dir / log_file)
        file_formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
        file_handler.setFormatter(file_formatter)
        logger.addHandler(file_handler)

    # Console handler writes to stderr
    console_handler = logging.StreamHandler()
    console_formatter = logging.Formatter('%(levelname)s - %(message)s')
    console_handler.setFormatter(console_formatter)
    logger.addHandler(console_handler)

    return logger
