"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so keep the grouping stable.
"""


class EagleError(Exception):
    """Base class for all errors raised by the package."""


class ConfigError(EagleError, ValueError):
    """Invalid configuration, arguments, or request (exit code 2)."""


class DataError(EagleError, ValueError):
    """Malformed or inconsistent input data (exit code 3)."""


class SchemaError(DataError):
    """Unknown node/edge type, or a meta-path that does not fit the schema."""


class SplitError(ConfigError):
    """A pretrain/fine-tune split left some node type empty."""


class CompatibilityError(DataError):
    """A checkpoint does not match the graph it is applied to."""


class TrainingDivergence(EagleError, ArithmeticError):
    """Non-finite loss or gradient during optimisation (exit code 4)."""


class NonFiniteError(EagleError, ValueError):
    """An operator received NaN or infinite input; training loops report it as divergence."""


class TapeError(EagleError, RuntimeError):
    """Backward pass called against a missing or mismatched tape record."""
