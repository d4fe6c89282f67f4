"""Reference HTTP service for the streammem model-backend wire protocol."""

from .app import BackendConfig, ConfigError, create_app

__version__ = "0.1.0"

__all__ = ["BackendConfig", "ConfigError", "create_app", "__version__"]
