import logging
from typing import Optional

from src.utils.settings import settings

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(level: Optional[str] = None) -> None:
    """Install the pipeline log format on the root logger."""
    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper(), logging.INFO),
        format=LOG_FORMAT,
    )
    # matplotlib is chatty at INFO when the report agent builds figures
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
