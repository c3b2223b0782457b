"""Exception types shared across the package.

The CLI maps these onto process exit codes, so raising the right type
matters for scripted use.
"""


class PanelSmcError(Exception):
    """Base class for package errors."""

    exit_code = 1


class ConfigError(PanelSmcError):
    """Invalid or incomplete run configuration."""

    exit_code = 2


class DataError(PanelSmcError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class NumericsError(PanelSmcError):
    """Numerical failure during an algorithm run."""

    exit_code = 4


class FilterFailureError(NumericsError):
    """All particle weights collapsed at some filtering step."""

    def __init__(self, message, *, unit_id=None, step=None, time=None):
        super().__init__(message)
        self.unit_id = unit_id
        self.step = step
        self.time = time
