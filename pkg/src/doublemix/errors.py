"""Exception types shared across the package."""


class DoubleMixError(Exception):
    """Base class for every error raised deliberately by this package."""


class DimensionError(DoubleMixError, ValueError):
    pass


class NumericError(DoubleMixError, ArithmeticError):
    pass


class ContractError(DoubleMixError, ValueError):
    """A precondition of an operation was violated by the caller."""


class DataError(DoubleMixError, ValueError):
    """Malformed or inconsistent input data (dataset, lexicon, table)."""


class ConfigError(DoubleMixError, ValueError):
    pass


class TrainingDivergedError(DoubleMixError, RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch, batch, plan, loss):
        self.epoch = epoch
        self.batch = batch
        self.plan = plan
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch} (mix plan: {plan})"
        )
