import logging
import sys

from ..config.settings import LOG_FILE, LOG_LEVEL

PACKAGE_LOGGER = "gp_experts"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def _configure_package_logger() -> logging.Logger:
    root = logging.getLogger(PACKAGE_LOGGER)
    if root.handlers:
        return root

    level = logging.getLevelName(LOG_LEVEL.upper())
    root.setLevel(level if isinstance(level, int) else logging.INFO)
    formatter = logging.Formatter(LOG_FORMAT)

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    root.addHandler(console_handler)

    # GPKSBP_LOG_FILE="" disables the file handler
    if LOG_FILE:
        file_handler = logging.FileHandler(LOG_FILE)
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)
    return root


def get_logger(name: str) -> logging.Logger:
    """Module loggers sit under the package logger and share its handlers."""
    root = _configure_package_logger()
    if name == PACKAGE_LOGGER or name.startswith(PACKAGE_LOGGER + "."):
        return logging.getLogger(name)
    # __main__ and other scripts
    return root.getChild(name.rsplit(".", 1)[-1])
