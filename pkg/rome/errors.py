"""Exception hierarchy. Every class carries the CLI exit code it maps to."""
from __future__ import annotations


class RomeError(Exception):
    exit_code = 1


class ConfigError(RomeError):
    exit_code = 2


class CompatibilityError(ConfigError):
    """A checkpoint does not match the resolved configuration."""


class DataError(RomeError):
    exit_code = 3


class SchemaError(DataError):
    pass


class EmptyDatasetError(DataError):
    pass


class ContractViolation(DataError):
    """Array shapes do not satisfy an operation's preconditions."""


class NumericalFailure(RomeError):
    exit_code = 4

    def __init__(self, message: str, *, iteration: int | None = None, row: int | None = None):
        self.detail = message
        self.iteration = iteration
        self.row = row
        where = []
        if iteration is not None:
            where.append(f"iteration {iteration}")
        if row is not None:
            where.append(f"row {row}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)

    def at_iteration(self, iteration: int) -> "NumericalFailure":
        """Same failure, tagged with the EM iteration it surfaced in."""
        return NumericalFailure(self.detail, iteration=iteration, row=self.row)


class InfeasibleConstraintError(NumericalFailure):
    pass


class TrainingFailure(NumericalFailure):
    def __init__(self, message: str, *, epoch: int, batch: int):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")


class DegenerateTestError(RomeError):
    """Paired differences have zero variance, so the t statistic is undefined."""

    exit_code = 4


def with_context(exc: RomeError, context: str) -> RomeError:
    """Prefix the message with where it happened, keeping the exception class."""
    exc.args = (f"{context}: {exc}",)
    return exc


def check_shape(condition: bool, message: str) -> None:
    if not condition:
        raise ContractViolation(message)
