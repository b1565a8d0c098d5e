"""Base exception for every scalemap runtime failure.

Modules define their own subclasses next to the code that raises them;
the CLI maps any ScalemapError to exit code 1.
"""


class ScalemapError(Exception):
    pass


class ConfigError(ScalemapError):
    """A parameter combination that can never produce a valid run."""
