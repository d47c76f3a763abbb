"""Speech-based stress-indicator pipeline.

Builds three stress-change regression targets (cortisol, appraisal,
negative affect) from session metadata, extracts windowed acoustic
features from the session recordings, and trains GRU sequence regressors
with mean or attention pooling, single- or multi-task heads, and global
or per-speaker feature normalization.
"""

__version__ = "0.1.0"


class DataError(Exception):
    """Malformed or inconsistent input data (CSV schema, WAV format, ...)."""


class ParseError(DataError):
    """A file failed to parse; the message names the offending row/column."""


class NumericError(Exception):
    """A numeric invariant was violated (non-finite loss or gradient)."""
