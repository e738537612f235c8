# felrl/errors.py

# ─────────────────────────────────────────────────────────────────────────────
# Exception hierarchy shared by every module
# ─────────────────────────────────────────────────────────────────────────────


class FelRlError(Exception):
    """Base class for every error raised by the toolkit."""


class ContractViolation(FelRlError, ValueError):
    """A dimension or precondition check failed."""


class TrainingDivergence(FelRlError, ArithmeticError):
    """A gradient or loss became non-finite."""


class ConfigError(FelRlError):
    """
    An experiment config could not be parsed or validated.

    :param message: Human-readable reason.
    :param line: 1-based line in the config file, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


class EmptyDatasetError(FelRlError):
    """Sampling was requested from a dataset holding no transitions."""


class DatasetTooSmallError(FelRlError):
    """A split or model training needs more transitions than available."""


class UnknownStrategyError(FelRlError, KeyError):
    """An ensemble sampling strategy name is not recognised."""


class UnknownSuiteError(FelRlError, KeyError):
    """An ablation suite name is not recognised."""


class SchemaMismatchError(FelRlError):
    """Run files handed to the aggregator do not share their columns."""


class CheckpointMismatchError(FelRlError):
    """A checkpoint does not fit the environment or network it is loaded into."""


class RunFailure(FelRlError):
    """An experiment run stopped before finishing (marker written to disk)."""
