"""Exception types shared across the toolkit."""


class SpcaganError(Exception):
    """Base class for all toolkit errors."""


class SpecificationError(SpcaganError, ValueError):
    """A corpus/experiment specification violates its invariants."""


class InputError(SpcaganError, ValueError):
    """Input data is missing, empty, or structurally unusable."""


class FormatError(SpcaganError, ValueError):
    """A file exists but its header/layout cannot be interpreted."""


class TrainingError(SpcaganError, RuntimeError):
    """Model training aborted (non-finite loss, EM non-convergence, ...)."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class PipelineError(SpcaganError, RuntimeError):
    """An experiment stage failed; carries the stage name for diagnosis."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class SpcaSkip(SpcaganError, ArithmeticError):
    """The batch subspace regularizer is numerically unsafe for this batch.

    Raised when the SVD fails or the eigenvalue gap between components
    k and k+1 is below the safety threshold; the training loop treats it
    as "omit the term for this batch", not as a fatal error.
    """
