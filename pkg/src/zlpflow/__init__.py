"""Normalizing flows on the sphere S^(D-1) built from Fisher-zoom,
linear-project and rotation layers, with exact log densities, sampling,
maximum-likelihood fitting and numerical self-checks."""

__version__ = "0.1.0"

from .chain import FlowChain, LinearProjectLayer, RotationLayer, ZoomLayer
from .fit import DivergenceError, FitConfig, FitResult, KappaCapWarning, fit
from .linear_project import ConstraintError, LPParams, LPVariant, central_ag_log_pdf, kent_constraint_interval
from .presets import FAMILIES, FamilyPreset, build_preset, random_preset
from .sphere import Rotation, rotation_to, uniform_sample
from .zoom import ZoomParams, h_forward, h_inverse, vmf_log_density

__all__ = [
    "ConstraintError",
    "DivergenceError",
    "FAMILIES",
    "FamilyPreset",
    "FitConfig",
    "FitResult",
    "FlowChain",
    "KappaCapWarning",
    "LPParams",
    "LPVariant",
    "LinearProjectLayer",
    "Rotation",
    "RotationLayer",
    "ZoomLayer",
    "ZoomParams",
    "build_preset",
    "central_ag_log_pdf",
    "fit",
    "h_forward",
    "h_inverse",
    "kent_constraint_interval",
    "random_preset",
    "rotation_to",
    "uniform_sample",
    "vmf_log_density",
]
