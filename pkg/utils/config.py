"""
Configuration utilities for nvdephase.

Settings come from the environment (optionally a .env file). Every setting has a
default, so a bare checkout runs without any configuration.
"""
import os
from dotenv import load_dotenv
from typing import Any, Callable, Optional, TypeVar

# Load environment variables from .env file
load_dotenv()

_TRUE_VALUES = ('true', 'yes', '1', 'y', 'on')
_FALSE_VALUES = ('false', 'no', '0', 'n', 'off')

T = TypeVar('T')


class Config:
    """
    Typed access to the nvdephase environment settings.

    Unset and blank variables fall back to the default; malformed values raise
    ValueError naming the variable.
    """

    @staticmethod
    def get(key: str, default: Optional[Any] = None) -> Any:
        """
        Get an environment variable.

        Args:
            key: The name of the environment variable.
            default: Default value if the variable is unset or blank.

        Returns:
            The raw string value, or the default.
        """
        value = os.environ.get(key)
        if value is None or value.strip() == '':
            return default
        return value.strip()

    @staticmethod
    def _parsed(key: str, default: T, parse: Callable[[str], T], kind: str) -> T:
        value = Config.get(key)
        if value is None:
            return default
        try:
            return parse(value)
        except ValueError:
            raise ValueError(f"Environment variable '{key}' must be {kind}, got '{value}'")

    @staticmethod
    def get_bool(key: str, default: bool = False) -> bool:
        """Boolean setting; accepts true/false, yes/no, 1/0, y/n and on/off."""
        def parse(value: str) -> bool:
            lowered = value.lower()
            if lowered in _TRUE_VALUES:
                return True
            if lowered in _FALSE_VALUES:
                return False
            raise ValueError(value)

        return Config._parsed(key, default, parse, 'a boolean')

    @staticmethod
    def get_int(key: str, default: int, minimum: Optional[int] = None) -> int:
        """
        Integer setting.

        Args:
            key: The name of the environment variable.
            default: Value used when the variable is unset.
            minimum: Smallest accepted value, if any.

        Raises:
            ValueError: If the value is not an integer or lies below the minimum.
        """
        value = Config._parsed(key, default, int, 'an integer')
        if minimum is not None and value < minimum:
            raise ValueError(f"Environment variable '{key}' must be >= {minimum}, got {value}")
        return value

    @staticmethod
    def get_float(key: str, default: float) -> float:
        return Config._parsed(key, default, float, 'a number')


# Constants
ENVIRONMENT = Config.get('ENVIRONMENT', 'development')

# Output and logging
OUTPUT_DIR = Config.get('NVDEPH_OUTPUT_DIR', 'results')
LOG_DIR = Config.get('NVDEPH_LOG_DIR', 'logs')
LOG_LEVEL = Config.get('NVDEPH_LOG_LEVEL', 'INFO').upper()
LOG_TO_FILE = Config.get_bool('NVDEPH_LOG_TO_FILE', True)

# Sampler defaults
DEFAULT_SEED = Config.get_int('NVDEPH_SEED', 20180701, minimum=0)
DEFAULT_CHAINS = Config.get_int('NVDEPH_CHAINS', 4, minimum=1)
DEFAULT_ITERS = Config.get_int('NVDEPH_ITERS', 50000, minimum=1)
MAX_WORKERS = Config.get_int('NVDEPH_MAX_WORKERS', 1, minimum=1)
