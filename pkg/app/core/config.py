"""Application configuration management.

This module handles environment-specific configuration loading, parsing, and management
for the toolkit. It includes environment detection, .env file loading, and
configuration value parsing. Run-level settings (model widths, training schedule,
generator ranges) live in the pydantic models under ``app.tools.models`` and are
read from the JSON file passed to the CLI; this module only holds process-wide knobs.
"""

import os
from enum import Enum
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv


# Define environment types
class Environment(str, Enum):
    """Application environment types.

    Defines the possible environments the toolkit can run in:
    development, staging, production, and test.
    """

    DEVELOPMENT = "development"
    STAGING = "staging"
    PRODUCTION = "production"
    TEST = "test"


# Determine environment
def get_environment() -> Environment:
    """Get the current environment.

    Returns:
        Environment: The current environment (development, staging, production, or test)
    """
    match os.getenv("APP_ENV", "development").lower():
        case "production" | "prod":
            return Environment.PRODUCTION
        case "staging" | "stage":
            return Environment.STAGING
        case "test":
            return Environment.TEST
        case _:
            return Environment.DEVELOPMENT


# Load appropriate .env file based on environment
def load_env_file() -> Optional[str]:
    """Load environment-specific .env file.

    Returns:
        Optional[str]: The path of the file that was loaded, if any.
    """
    env = get_environment()
    base_dir = os.path.dirname(os.path.dirname(os.path.dirname(__file__)))

    # Define env files in priority order
    env_files = [
        os.path.join(base_dir, f".env.{env.value}.local"),
        os.path.join(base_dir, f".env.{env.value}"),
        os.path.join(base_dir, ".env.local"),
        os.path.join(base_dir, ".env"),
    ]

    # Load the first env file that exists
    for env_file in env_files:
        if os.path.isfile(env_file):
            load_dotenv(dotenv_path=env_file)
            return env_file

    return None


ENV_FILE = load_env_file()


def parse_bool_from_env(env_key: str, default: str = "false") -> bool:
    """Parse a truthy string from an environment variable."""
    return os.getenv(env_key, default).lower() in ("true", "1", "t", "yes")


class Settings:
    """Process-wide settings without using pydantic."""

    def __init__(self):
        """Initialize settings from environment variables.

        Loads and sets all configuration values from environment variables,
        with appropriate defaults for each setting. Also applies
        environment-specific overrides based on the current environment.
        """
        # Set the environment
        self.ENVIRONMENT = get_environment()

        # Application Settings
        self.PROJECT_NAME = os.getenv("PROJECT_NAME", "lipmotion")
        self.VERSION = os.getenv("VERSION", "0.1.0")
        self.DEBUG = parse_bool_from_env("DEBUG")

        # Logging Configuration
        self.LOG_DIR = Path(os.getenv("LOG_DIR", "logs"))
        self.LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
        self.LOG_FORMAT = os.getenv("LOG_FORMAT", "json")  # "json" or "console"
        self.LOG_TO_FILE = parse_bool_from_env("LOG_TO_FILE")

        # Metrics Configuration (empty path disables the textfile export)
        self.METRICS_TEXTFILE = os.getenv("METRICS_TEXTFILE", "")

        # Reproducibility
        self.DEFAULT_SEED = int(os.getenv("DEFAULT_SEED", "0"))

        # I/O
        self.LOAD_CONCURRENCY = int(os.getenv("LOAD_CONCURRENCY", "8"))

        # Geometry
        self.DEGENERACY_EPS_MM = float(os.getenv("DEGENERACY_EPS_MM", "1e-6"))

        # Lip landmark designations, as positions inside the 200-point lip grid
        self.CORNER_LEFT_POSITION = int(os.getenv("CORNER_LEFT_POSITION", "0"))
        self.CORNER_RIGHT_POSITION = int(os.getenv("CORNER_RIGHT_POSITION", "19"))
        self.UPPER_REF_POSITION = int(os.getenv("UPPER_REF_POSITION", "9"))

        # Apply environment-specific settings
        self.apply_environment_settings()

    def apply_environment_settings(self):
        """Apply environment-specific settings based on the current environment."""
        env_settings = {
            Environment.DEVELOPMENT: {
                "DEBUG": True,
                "LOG_LEVEL": "DEBUG",
                "LOG_FORMAT": "console",
            },
            Environment.STAGING: {
                "DEBUG": False,
                "LOG_LEVEL": "INFO",
            },
            Environment.PRODUCTION: {
                "DEBUG": False,
                "LOG_LEVEL": "WARNING",
                "LOG_TO_FILE": True,
            },
            Environment.TEST: {
                "DEBUG": True,
                "LOG_LEVEL": "WARNING",
                "LOG_FORMAT": "console",
                "LOG_TO_FILE": False,
            },
        }

        # Get settings for current environment
        current_env_settings = env_settings.get(self.ENVIRONMENT, {})

        # Apply settings if not explicitly set in environment variables
        for key, value in current_env_settings.items():
            env_var_name = key.upper()
            # Only override if environment variable wasn't explicitly set
            if env_var_name not in os.environ:
                setattr(self, key, value)


# Create settings instance
settings = Settings()
