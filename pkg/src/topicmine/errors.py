"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: input/config problems exit 2,
numerical aborts exit 3.
"""


class TopicmineError(Exception):
    """Base class for all toolkit errors."""


class InputError(TopicmineError):
    """Malformed or unusable input data (files, corpora, embeddings)."""


class ConfigError(TopicmineError):
    """Invalid parameter or configuration value."""


class NumericalError(TopicmineError):
    """Non-finite values encountered during optimization or sampling."""
