"""Module with the logging setup used by the CLI."""

import logging
import os

from dotenv import load_dotenv

LOG_FORMAT = "%(asctime)s %(levelname)s:%(name)s: %(message)s"

_LEVELS = {
    "error": logging.ERROR,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def configure_logging(level: str = None) -> int:
    """Configure the root logger from an explicit level or the MONETLAB_LOG variable.

    The variable is read after loading a local .env file, so it can be set there too.

    Args:
        level (str, optional): One of "error", "info" or "debug". Defaults to MONETLAB_LOG.

    Returns:
        int: The numeric logging level applied.
    """
    load_dotenv()
    name = (level or os.getenv("MONETLAB_LOG", "info")).strip().lower()
    numeric = _LEVELS.get(name)

    logging.basicConfig(level=numeric or logging.INFO, format=LOG_FORMAT, force=True)

    if numeric is None:
        logging.getLogger(__name__).warning(
            "Unknown log level %r, falling back to info", name
        )
        numeric = logging.INFO

    return numeric
