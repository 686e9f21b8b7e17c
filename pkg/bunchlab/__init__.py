import logging
import os
import sys
from typing import Optional

from .config import Config

__version__ = "0.3.0"

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

logger = logging.getLogger(__name__)


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """
    Sets up the file + stream handler pair used by the CLI and scripts.

    Library code never calls this; it only logs through module loggers.
    Stream output goes to stderr so stdout stays reserved for results.
    """
    level = (level or Config.LOG_LEVEL).upper()
    log_file = Config.LOG_FILE if log_file is None else log_file

    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        os.makedirs(os.path.dirname(log_file) or '.', exist_ok=True)
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)
    logger.debug(f"Logging configured (level={level}, file={log_file or 'none'})")
