"""Exception types raised across the package."""


class SynthesisError(RuntimeError):
    """Exact Gaussian synthesis could not be carried out."""


class ConditioningError(ArithmeticError):
    """A Gaussian covariance block was singular; carries the offending grid."""

    def __init__(self, message, grid=None):
        super().__init__(message)
        self.grid = grid


class CoverageError(ValueError):
    """A path left the spatial box of a grid."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class EvaluationError(ArithmeticError):
    """A coefficient or functional produced non-finite values."""


class EstimationError(ValueError):
    """Not enough usable data for a regression."""


class BlowUpError(ArithmeticError):
    """Particle state became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """Experiment configuration could not be parsed or validated."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line


class ReproducibilityError(RuntimeError):
    """A persisted artifact is missing or its checksum does not match."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
