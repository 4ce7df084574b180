"""Failure classes shared across the package.

Each class maps to one CLI exit code so callers can distinguish bad
configuration from bad data, training divergence, and metric
preconditions that do not hold on the supplied inputs.
"""


class UstransError(Exception):
    """Base class for all package errors."""


class ConfigError(UstransError):
    """Invalid or unknown configuration (exit code 2)."""


class DataError(UstransError):
    """Malformed, degenerate, or missing input data (exit code 3)."""


class DivergenceError(UstransError):
    """Non-finite losses during training (exit code 4)."""

    def __init__(self, message, epoch=None, step=None, batch_indices=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.batch_indices = batch_indices


class MetricPreconditionError(UstransError):
    """A metric's preconditions fail on the given input (exit code 5)."""


EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    DivergenceError: 4,
    MetricPreconditionError: 5,
}
