"""Exception types shared across the toolkit."""


class ConfigurationError(ValueError):
    """An option or hyperparameter combination is not supported."""


class DomainError(ValueError):
    """An argument is outside the mathematical domain of an operation."""


class StateError(RuntimeError):
    """An object is not in a state that permits the requested operation."""


class TrainingFailure(RuntimeError):
    """Optimization diverged. Carries the recorded loss trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class EstimationError(RuntimeError):
    """A statistical estimator has no valid samples to work with."""


class ResourceError(RuntimeError):
    """A resource guard (memory/depth) was exceeded."""


class DataError(ValueError):
    """Input data is malformed (wrong shape, non-finite values, ...)."""


class ProcessingError(RuntimeError):
    """An external codec or filter failed."""


class ComparabilityError(ValueError):
    """Two runs cannot be compared (mismatched configs or seeds)."""
