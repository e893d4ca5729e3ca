"""Semantic exceptions shared across the package.

The CLI maps ConfigError to exit code 2 and NumericError to exit code 3;
everything else is a plain bug and propagates.
"""


class GdseError(Exception):
    """Base class for package errors."""


class ConfigError(GdseError, ValueError):
    """Invalid or unknown configuration input (bad keys, bad values)."""


class NumericError(GdseError, ArithmeticError):
    """A numerical procedure failed (divergence, non-convergence, broken PSD)."""
