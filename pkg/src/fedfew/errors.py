class ConfigError(ValueError):
    """Invalid configuration or experiment setup (CLI exit code 2)."""
