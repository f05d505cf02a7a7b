import logging
from typing import Optional

from famgp.config import LOG_FILE, LOG_LEVEL

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

logger = logging.getLogger("famgp")  # Package logger, handlers attached by configure_logging


def configure_logging(level: str = LOG_LEVEL, log_file: Optional[str] = LOG_FILE) -> None:
    """
    Attach console and file handlers to the package logger.

    Parameters
    ----------
    level : str
        Logging level name (DEBUG, INFO, WARNING, ERROR, CRITICAL).
    log_file : str, optional
        Path of the appended log file. ``None`` or an empty string logs to the console only.
    """
    handlers = [logging.StreamHandler()]  # Output to console
    if log_file:
        handlers.append(logging.FileHandler(log_file, mode="a"))  # Output to a file

    formatter = logging.Formatter(LOG_FORMAT)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    for handler in handlers:
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    logger.setLevel(level.upper())
