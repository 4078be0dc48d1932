import logging

from rich.console import Console
from rich.logging import RichHandler

PACKAGE_LOGGER = "tubeshell"


def configure_logging(verbose: int = 0) -> logging.Logger:
    """Attach a RichHandler on stderr to the package logger.

    verbose 0 shows warnings, 1 stage progress, 2 per-iteration detail.
    """
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logger = logging.getLogger(PACKAGE_LOGGER)
    for handler in list(logger.handlers):
        if isinstance(handler, RichHandler):
            logger.removeHandler(handler)
    handler = RichHandler(console=Console(stderr=True), show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False
    return logger
