"""Watchdog-gated LSTM energy-theft detection for radial grid segments."""

__version__ = "0.1.0"

from .errors import DataError, FormatError, NumericError, ParseError, UsageError  # noqa: E402,F401
