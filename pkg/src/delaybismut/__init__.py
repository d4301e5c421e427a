"""Bismut-type gradient estimators for truncated functional SPDEs with delay."""

from .bismut import estimate_gradient, estimate_gradient_additive, estimate_gradient_multiplicative, estimate_semigroup, ito_weight
from .mc import GradientEstimate, MCConfig
from .model import DiffusionSpec, DriftSpec, ModelSpec, TestFunctional, normalize_pseudocontractive, validate_assumptions
from .pathsim import GridSpec, SegmentPath, integrate_mild, integrate_shifted, make_grid, sample_noise, segment_at
from .sensitivity import control_function

__all__ = [
    "DiffusionSpec",
    "DriftSpec",
    "GradientEstimate",
    "GridSpec",
    "MCConfig",
    "ModelSpec",
    "SegmentPath",
    "TestFunctional",
    "control_function",
    "estimate_gradient",
    "estimate_gradient_additive",
    "estimate_gradient_multiplicative",
    "estimate_semigroup",
    "integrate_mild",
    "integrate_shifted",
    "ito_weight",
    "make_grid",
    "normalize_pseudocontractive",
    "sample_noise",
    "segment_at",
    "validate_assumptions",
]
