"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numeric failures exit 3.
"""


class SceneGraphError(Exception):
    """Base class for all engine errors."""


class ConfigError(SceneGraphError):
    """Invalid configuration value or inconsistent dimension setup."""


class DataError(SceneGraphError):
    """Malformed input data: stream lines, updates, label files."""


class NumericError(SceneGraphError):
    """A computation produced NaN/Inf or otherwise left the valid domain."""
