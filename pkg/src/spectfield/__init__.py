"""Sparse-view SPECT toolkit: simulation, per-scan view synthesis, OSEM."""

from .container import container_read, container_write
from .errors import ConfigError, FormatError, NumericError
from .field import FieldModel, TrainConfig, synthesize, train
from .geometry import (CircularOrbit, EllipticalOrbit, ProjectionStack,
                       ScanGeometry, ViewSplit, make_geometry, split_views)
from .interp import REGIMES, assemble_regime, linear_interpolate_views
from .metrics import MetricsReport, evaluate_regimes, nrmsd
from .phantom import ImageVolume, Phantom, PhantomSpec, SphereSpec, VoiMask, build_phantom
from .projector import SystemModel, back_project, forward_project
from .recon import ReconConfig, osem, poisson_loglik, tew_scatter_estimate
from .simulate import Acquisition, ScatterParams, acquire

__version__ = "0.1.0"

__all__ = [
    "Acquisition", "CircularOrbit", "ConfigError", "EllipticalOrbit",
    "FieldModel", "FormatError", "ImageVolume", "MetricsReport",
    "NumericError", "Phantom", "PhantomSpec", "ProjectionStack", "REGIMES",
    "ReconConfig", "ScanGeometry", "ScatterParams", "SphereSpec",
    "SystemModel", "TrainConfig", "ViewSplit", "VoiMask", "acquire",
    "assemble_regime", "back_project", "build_phantom", "container_read",
    "container_write", "evaluate_regimes", "forward_project",
    "linear_interpolate_views", "make_geometry", "nrmsd", "osem",
    "poisson_loglik", "split_views", "synthesize", "tew_scatter_estimate",
    "train",
]
