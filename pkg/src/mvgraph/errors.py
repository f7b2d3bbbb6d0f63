from __future__ import annotations


class ConfigError(ValueError):
    """Bad configuration or schema; maps to CLI exit code 1."""


class DataError(ValueError):
    """Input data violates a structural contract (e.g. an item with two categories)."""


class DivergenceError(FloatingPointError):
    """A loss or total objective became non-finite during optimisation.

    ``state`` carries whatever partially trained object the caller can still
    persist (the parameters as of the last finite step).
    """

    def __init__(self, message: str, state: object | None = None) -> None:
        super().__init__(message)
        self.state = state
