"""
Configuration management for intermittent-sdde.

This module centralizes paths, numerical defaults and logging setup. Every
setting can be overridden through the environment or a ``.env`` file.
"""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from .errors import ConfigurationError

# Load environment variables from .env file
load_dotenv()


class Config:
    """Central configuration class for the application."""

    # Project paths
    PROJECT_ROOT = Path(__file__).parent.parent.parent

    # Working directories
    RESULTS_DIR = Path(os.getenv("SDDE_RESULTS_DIR", str(PROJECT_ROOT / "results")))
    LOGS_DIR = PROJECT_ROOT / "logs"
    LOG_FILE_NAME = "intermittent_sdde.log"

    # Certificate grid checks
    GRID_RADIUS: float = float(os.getenv("SDDE_GRID_RADIUS", "5.0"))
    GRID_RESOLUTION: int = int(os.getenv("SDDE_GRID_RESOLUTION", "401"))
    ASYMPTOTIC_RADIUS: float = float(os.getenv("SDDE_ASYMPTOTIC_RADIUS", "1e4"))
    ASYMPTOTIC_DIRECTIONS: int = int(os.getenv("SDDE_ASYMPTOTIC_DIRECTIONS", "720"))
    CHECK_RTOL: float = float(os.getenv("SDDE_CHECK_RTOL", "1e-9"))
    CHECK_ATOL: float = float(os.getenv("SDDE_CHECK_ATOL", "1e-9"))
    EPSILON_GRID: int = int(os.getenv("SDDE_EPSILON_GRID", "1000"))

    # Monte Carlo
    MAX_OUTPUT_ROWS: int = int(os.getenv("SDDE_MAX_OUTPUT_ROWS", "2000"))
    BATCH_SIZE: int = int(os.getenv("SDDE_BATCH_SIZE", "256"))
    WORKERS: int = int(os.getenv("SDDE_WORKERS", "1"))

    # Logging configuration
    LOG_LEVEL: str = os.getenv("SDDE_LOG_LEVEL", "INFO")
    LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

    @classmethod
    def validate(cls) -> None:
        """Validate numerical settings and create the working directories."""
        if cls.GRID_RADIUS <= 0:
            raise ConfigurationError(f"SDDE_GRID_RADIUS must be positive, got {cls.GRID_RADIUS}")
        if cls.GRID_RESOLUTION < 2:
            raise ConfigurationError(
                f"SDDE_GRID_RESOLUTION must be at least 2, got {cls.GRID_RESOLUTION}"
            )
        if cls.ASYMPTOTIC_DIRECTIONS < 4:
            raise ConfigurationError("SDDE_ASYMPTOTIC_DIRECTIONS must be at least 4")
        if cls.MAX_OUTPUT_ROWS < 10:
            raise ConfigurationError("SDDE_MAX_OUTPUT_ROWS must be at least 10")
        if cls.BATCH_SIZE < 1 or cls.WORKERS < 1:
            raise ConfigurationError("SDDE_BATCH_SIZE and SDDE_WORKERS must be positive")
        if cls.EPSILON_GRID < 10:
            raise ConfigurationError("SDDE_EPSILON_GRID must be at least 10")

        # Create necessary directories
        cls.RESULTS_DIR.mkdir(parents=True, exist_ok=True)
        cls.LOGS_DIR.mkdir(parents=True, exist_ok=True)

    @classmethod
    def setup_logging(cls, level: Optional[str] = None) -> None:
        """Set up logging configuration."""
        level_name = (level or cls.LOG_LEVEL).upper()
        numeric_level = getattr(logging, level_name, None)
        if not isinstance(numeric_level, int):
            raise ConfigurationError(f"Unknown log level: {level_name}")
        logging.basicConfig(
            level=numeric_level,
            format=cls.LOG_FORMAT,
            handlers=[
                logging.FileHandler(cls.LOGS_DIR / cls.LOG_FILE_NAME),
                logging.StreamHandler(),
            ],
        )


# Create global config instance
config = Config()


def get_config() -> Config:
    """Get the global configuration instance."""
    return config


def get_results_dir() -> Path:
    """Get the results directory path."""
    return config.RESULTS_DIR
