"""Typed errors separating configuration, data, and numerical failures.

The command line tool maps these onto distinct exit codes, so library code
should raise the most specific class that applies.  Plain ``ValueError`` is
reserved for programming errors (bad argument shapes, out-of-domain inputs).
"""


class WarpmixError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(WarpmixError):
    """Invalid configuration: unknown keys, inconsistent settings, bad values."""


class DataError(WarpmixError):
    """Malformed, degenerate, or insufficient input data."""


class NumericsError(WarpmixError):
    """Numerical failure: non-factorizable matrix, rank deficiency, divergence."""
