"""Exception hierarchy shared across the package."""


class IMAMLError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(IMAMLError, ValueError):
    """Invalid hyperparameter or configuration value."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class DimensionError(IMAMLError, ValueError):
    """Vector or batch dimensions do not match what a graph or task expects."""


class NonFiniteError(IMAMLError, FloatingPointError):
    """A NaN or infinity appeared while evaluating a graph."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class DivergenceError(IMAMLError, FloatingPointError):
    """An iterative solver produced a non-finite iterate."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class CurvatureError(IMAMLError, ArithmeticError):
    """Conjugate gradient met a direction with non-positive curvature.

    ``partial`` holds the iterate reached before the offending direction so
    that truncated-Newton callers can still use it.
    """

    def __init__(self, message, partial=None, iteration=0):
        super().__init__(message)
        self.partial = partial
        self.iteration = iteration


class DescentError(IMAMLError, ValueError):
    """A line search was asked to move along a non-descent direction."""


class OracleError(IMAMLError, ValueError):
    """A closed-form oracle is unavailable or its hypotheses do not hold."""


class CheckpointError(IMAMLError, OSError):
    """A checkpoint file is corrupt or has an unsupported format version."""
