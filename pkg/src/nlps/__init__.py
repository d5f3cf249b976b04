"""Near-light photometric stereo with a neural depth surface.

Depth is a sine-activated MLP of image coordinates.  Its spatial gradient is
computed exactly in the forward pass, which gives closed-form normals, and the
photometric loss is differentiated back to the weights by hand.
"""

from .errors import (
    ConfigError,
    DegenerateGeometryError,
    DegenerateNormalError,
    DivergenceError,
    EmptyEvaluationError,
    EmptyProblemError,
    InvalidDepthError,
    MaskedGradientError,
    NLPSError,
    NonFiniteGradientError,
    ShapeMismatchError,
    UndefinedAlbedoError,
)
from .geometry import CameraModel
from .maps import SurfaceMaps
from .metrics import EvalReport, evaluate
from .neural_surface import ArchitectureSpec, ParameterVector, init_params
from .optimizer import AdamState, Checkpoint, Schedule, SolveResult, solve
from .photometric import ObservationStack, PointLight, reconstruction_loss, shadow_mask

__version__ = "0.1.0"

__all__ = [
    "AdamState", "ArchitectureSpec", "CameraModel", "Checkpoint", "ConfigError",
    "DegenerateGeometryError", "DegenerateNormalError", "DivergenceError",
    "EmptyEvaluationError", "EmptyProblemError", "EvalReport", "InvalidDepthError",
    "MaskedGradientError", "NLPSError", "NonFiniteGradientError", "ObservationStack",
    "ParameterVector", "PointLight", "Schedule", "ShapeMismatchError", "SolveResult",
    "SurfaceMaps", "UndefinedAlbedoError", "evaluate", "init_params",
    "reconstruction_loss", "shadow_mask", "solve",
]
