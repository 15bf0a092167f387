"""Exception types shared across the package.

The CLI maps :class:`ConfigurationError` to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class ConfigurationError(ValueError):
    """Invalid geometry, coefficients, scenario document or run options."""


class NumericalError(RuntimeError):
    """A solve or time step failed to meet its accuracy contract."""
