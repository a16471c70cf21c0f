"""
Logging setup. Verbosity comes from REASONIQ_LOG_LEVEL (a .env file is honored).
"""

import logging
import os

from dotenv import load_dotenv

LOG_LEVEL_ENV = "REASONIQ_LOG_LEVEL"
_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"

_configured = False


def configure_logging(level: str = None) -> int:
    """
    Configure the root logger once and return the effective level.

    Args:
        level: Explicit level name; falls back to REASONIQ_LOG_LEVEL, then INFO.
    """
    global _configured
    load_dotenv()

    name = (level or os.getenv(LOG_LEVEL_ENV) or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.INFO

    root = logging.getLogger()
    if not _configured:
        logging.basicConfig(level=numeric, format=_FORMAT)
        _configured = True
    root.setLevel(numeric)
    return numeric