"""Shared error types for configuration and input validation."""


class ConfigError(ValueError):
    """Inconsistent or unsupported configuration."""


class FormatError(ValueError):
    """Malformed external file or record."""


class EmptyPhraseError(ValueError):
    """Phrase is empty after cleaning."""
