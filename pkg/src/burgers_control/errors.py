"""Shared error types."""


class ConfigError(ValueError):
    """Invalid configuration; carries the offending field path when known."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class StabilityError(ConfigError):
    """Explicit scheme parameters violate the stability bound."""
