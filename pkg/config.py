import logging
import sys
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_LEVELS = {
    "error": logging.ERROR,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


class Config(BaseSettings):
    """
    Configuration class to load settings from environment variables.
    """
    model_config = SettingsConfigDict(
        # This allows loading from a .env file
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    FUSIONKIT_LOG: str = "info"  # Options: error, warning, info, debug

    # Storage root for the HTTP surface
    DATA_DIR: str = "./data"

    DEFAULT_SEED: int = 0

    # LearnableAlign defaults
    ALIGN_MAX_N: int = 32
    ALIGN_DROPOUT_RATE: float = 0.3

    # Finite-difference step for grad-check
    GRAD_CHECK_EPS: float = 1e-5


def setup_logging(level: str | None = None, stream=sys.stdout):
    """
    Configures the root logger for the application.

    Args:
        level: One of error/warning/info/debug. Defaults to FUSIONKIT_LOG.
        stream: Where log records go. The CLI passes stderr.
    """
    name = (level or config.FUSIONKIT_LOG).lower()
    if name not in LOG_LEVELS:
        raise ValueError(f"Unknown log level: {name}")

    logging.basicConfig(
        level=LOG_LEVELS[name],
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.StreamHandler(stream)
        ],
        force=True,
    )

    logging.getLogger("uvicorn.error").setLevel(logging.WARNING)
    logging.getLogger("uvicorn.access").setLevel(logging.WARNING)

config = Config()
