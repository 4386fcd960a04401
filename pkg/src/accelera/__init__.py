"""Sound reach tubes for guarded linear loops by abstract acceleration."""

from .abstraction import (
    AbstractMatrix,
    InputDecomposition,
    MatrixShape,
    abstract_apply,
    build_ball_dynamics,
    geometric_sum_matrix,
    input_decompose,
    synthesize_abstract_matrix,
)
from .acceleration import (
    AnalysisOptions,
    GuardFace,
    LinearLoop,
    ReachTube,
    accelerate,
    estimate_n_lower,
    estimate_n_upper,
    guard_faces,
    one_step_image,
)
from .exceptions import (
    AcceleraError,
    AnalysisError,
    DecompositionError,
    DivergenceError,
    DomainError,
    EmptySetError,
    ModelError,
    NumericError,
    UnboundedError,
)
from .geometry import Ball, Polytope, SupportEvaluator, support, template_concretize
from .lgg import LggRun, lgg_propagate
from .linalg import JordanBlock, JordanForm, complexify, jordan_decompose, realify
from .model_io import parse_model, serialize_model, write_results
from .numerics import Interval, IntervalMatrix

__version__ = "0.1.0"
