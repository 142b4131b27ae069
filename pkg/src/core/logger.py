import functools
import logging
import time

from rich.console import Console
from rich.logging import RichHandler

from .config import settings

_configured = False


def get_logger(name=None):
    """
    Returns a logger with the specified name, configured for the project.
    Honors LOG_LEVEL and LOG_FILE from settings; console output goes through
    a rich handler on stderr so it never mixes with report output.
    """
    global _configured

    if not _configured:
        log_level = getattr(settings, "LOG_LEVEL", "INFO")
        numeric_level = getattr(logging, str(log_level).upper(), logging.INFO)
        log_file = getattr(settings, "LOG_FILE", None)

        if log_file:
            handler: logging.Handler = logging.FileHandler(
                log_file, mode="a", encoding="utf-8"
            )
            handler.setFormatter(
                logging.Formatter(
                    "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
                )
            )
        else:
            handler = RichHandler(
                console=Console(stderr=True),
                show_path=False,
                rich_tracebacks=False,
            )
            handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))

        root = logging.getLogger()
        root.setLevel(numeric_level)
        root.addHandler(handler)
        _configured = True

    return logging.getLogger(name)


def log_timing(logger=None):
    """
    Decorator to log execution time of a function.
    """

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            result = func(*args, **kwargs)
            elapsed = time.perf_counter() - start
            log = logger or get_logger(func.__module__)
            log.info(f"[TIMING] {func.__name__} took {elapsed:.2f}s")
            return result

        return wrapper

    return decorator
