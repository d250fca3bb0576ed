"""Exception types shared across the package."""


class EvognasError(Exception):
    """Base class for all package errors."""


class ConfigError(EvognasError):
    """Invalid configuration value, bound, or combination."""


class IngestionError(EvognasError):
    """Malformed or inconsistent dataset file."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class SplitError(EvognasError):
    """Dataset cannot be split as requested."""


class CheckpointError(EvognasError):
    """Checkpoint file is corrupt, truncated, or does not match the config."""
