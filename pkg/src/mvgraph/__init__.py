"""Multi-view graph representation learning for session-based recommendation."""

from mvgraph.errors import ConfigError, DataError, DivergenceError

__version__ = "0.1.0"

VIEWS = ("item", "category", "shop")

__all__ = ["VIEWS", "ConfigError", "DataError", "DivergenceError", "__version__"]
