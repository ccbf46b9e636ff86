"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite or otherwise unusable value."""


class SingularityError(NumericError):
    """A linear system that must be solved is singular."""


class TrainingDivergenceError(NumericError):
    """Score-network training produced a NaN or infinite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class ConfigError(ValueError):
    """Malformed or unknown experiment configuration."""


class TrialFailure(RuntimeError):
    """One trial of an experiment failed; carries the trial index and cause."""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"trial {index} failed: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause
