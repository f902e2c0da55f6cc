"""Exception types shared across the pipeline."""


class ValidationError(ValueError):
    """Input violates a documented invariant (bad range, bad geometry, ...)."""


class ParseError(ValueError):
    """A data file could not be parsed; the message names the offending row."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss and was aborted."""
