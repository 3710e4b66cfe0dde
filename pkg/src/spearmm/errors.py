"""Exception hierarchy. Everything user-facing derives from SpearmmError so the
CLI can map input/validation problems to exit code 2."""


class SpearmmError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SpearmmError):
    """Invalid numeric input or configuration value."""


class CheckpointFormatError(SpearmmError):
    """A checkpoint file does not conform to the expected binary layout."""


class AlignmentError(SpearmmError):
    """Two checkpoints cannot be matched tensor-for-tensor."""


class AntipodalError(SpearmmError):
    """Spherical interpolation between (near-)opposite vectors is ill-defined."""


class EvaluatorError(SpearmmError):
    """An external evaluator could not be resolved or every trial failed."""
