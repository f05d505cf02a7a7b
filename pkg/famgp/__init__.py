"""Fast approximate Gaussian process regression on truncated Mercer expansions."""

__version__ = "0.1.0"
