"""Cascaded coupled regression of 2D landmarks and 3D face shape.

The public surface re-exports the main types and entry points; see the
individual modules for the full API.
"""
__version__ = "0.1.0"

from ._kernels import BACKEND
from .camera import (LandmarkSet2D, MappingMatrix, RigidTransform, fit_mapping, landmark_visibility,
                     procrustes_align, project, rigid_icp, visibility_mask)
from .cascade import CascadeModel, FitResult, TrainingSample, fit, train_cascade
from .errors import (DegenerateGeometryError, DimensionError, FaceCascadeError, FormatError,
                     InvalidMappingError, ModelFormatError, SingularFitError, SingularGramError)
from .features import FeatureConfig, GrayImage, SiftExtractor, heatmap, sift_descriptor
from .model_io import load_model, save_model
from .shape_model import Shape3D, ShapePrior, ShapeState, compose_shape, vertex_normals

__all__ = [
    "BACKEND",
    "CascadeModel", "FitResult", "TrainingSample", "fit", "train_cascade",
    "DegenerateGeometryError", "DimensionError", "FaceCascadeError", "FormatError",
    "InvalidMappingError", "ModelFormatError", "SingularFitError", "SingularGramError",
    "FeatureConfig", "GrayImage", "SiftExtractor", "heatmap", "sift_descriptor",
    "LandmarkSet2D", "MappingMatrix", "RigidTransform", "fit_mapping", "landmark_visibility",
    "procrustes_align", "project", "rigid_icp", "visibility_mask",
    "load_model", "save_model",
    "Shape3D", "ShapePrior", "ShapeState", "compose_shape", "vertex_normals",
]
