"""Exception hierarchy shared by all nlps modules."""


class NLPSError(Exception):
    """Base class for every error raised by this package."""


class InvalidDepthError(NLPSError, ValueError):
    pass


class DegenerateGeometryError(NLPSError, ValueError):
    """A light coincides with the scene point it illuminates."""


class DegenerateNormalError(NLPSError, ValueError):
    pass


class UndefinedAlbedoError(NLPSError, ValueError):
    """No unmasked light produces nonzero shading at the pixel."""


class EmptyProblemError(NLPSError, ValueError):
    pass


class EmptyEvaluationError(NLPSError, ValueError):
    pass


class ShapeMismatchError(NLPSError, ValueError):
    """Structural mismatch between arrays, tapes or parameter layouts."""


class MaskedGradientError(NLPSError, ValueError):
    """A grid pixel has no valid neighbour along some axis."""


class NonFiniteGradientError(NLPSError, FloatingPointError):
    pass


class DivergenceError(NLPSError, FloatingPointError):
    """Raised when the loss becomes non-finite during a solve.

    ``checkpoint`` holds the last parameters and optimizer state whose loss
    was finite, so a caller can inspect or resume from them.
    """

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class ConfigError(NLPSError, ValueError):
    pass
