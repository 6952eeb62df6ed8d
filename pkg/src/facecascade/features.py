"""Local texture features around landmarks and landmark heatmaps."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Protocol

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .camera import LandmarkSet2D
from .errors import DimensionError

__all__ = [
    "GrayImage",
    "FeatureConfig",
    "FeatureExtractor",
    "SiftExtractor",
    "sift_descriptor",
    "sift_descriptors",
    "assemble_features",
    "heatmap",
]


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major grayscale image with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float64, copy=True)
        if p.ndim != 2:
            raise DimensionError(f"image must be 2-D, got shape {p.shape}")
        if p.size and (not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0):
            raise ValueError("image intensities must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class FeatureConfig:
    """Descriptor geometry.

    ``patch_fraction`` ties the patch side to the face size: when set and a
    bounding box is known, the patch side is ``round(sqrt(w*h) * fraction)``
    (at least ``cells`` pixels); otherwise ``patch_size`` is used.
    """

    patch_size: int = 32
    cells: int = 4
    orientation_bins: int = 8
    clamp: float = 0.2
    patch_fraction: float | None = 1.0 / 6.0

    def __post_init__(self):
        if self.patch_size < 1 or self.cells < 1 or self.orientation_bins < 1:
            raise ValueError("patch_size, cells and orientation_bins must be positive")
        if not 0.0 < self.clamp <= 1.0:
            raise ValueError("clamp must lie in (0, 1]")

    @property
    def descriptor_dim(self) -> int:
        return self.cells * self.cells * self.orientation_bins

    def patch_for(self, bbox=None) -> int:
        if self.patch_fraction is None or bbox is None:
            return self.patch_size
        side = np.sqrt(float(bbox[2]) * float(bbox[3]))
        return max(int(round(side * self.patch_fraction)), self.cells)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(**d)


def _normalize(hist: np.ndarray, clamp: float) -> np.ndarray:
    out = np.zeros_like(hist)
    norms = np.linalg.norm(hist, axis=1)
    ok = norms > 0.0
    h = hist[ok] / norms[ok, None]
    h = np.minimum(h, clamp)
    n2 = np.linalg.norm(h, axis=1)
    out[ok] = h / n2[:, None]
    return out


def sift_descriptors(image: GrayImage, centers, config: FeatureConfig = FeatureConfig(),
                     patch: int | None = None) -> np.ndarray:
    """Upright fixed-scale SIFT descriptors at each ``(u, v)`` centre; shape (l, dim)."""
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if centers.shape[0] == 0:
        return np.zeros((0, config.descriptor_dim))
    if not np.all(np.isfinite(centers)):
        raise ValueError("descriptor centres must be finite")
    hist = _kernels.sift_histograms(image.pixels, centers, int(patch or config.patch_size),
                                    config.cells, config.orientation_bins)
    return _normalize(hist, config.clamp)


def sift_descriptor(image: GrayImage, center, config: FeatureConfig = FeatureConfig(),
                    patch: int | None = None) -> np.ndarray:
    """Single-centre form of :func:`sift_descriptors`."""
    return sift_descriptors(image, np.asarray(center, dtype=np.float64).reshape(1, 2),
                            config, patch)[0]


def assemble_features(image: GrayImage, landmarks: LandmarkSet2D,
                      config: FeatureConfig = FeatureConfig(), bbox=None) -> np.ndarray:
    """Concatenated descriptors, one block per landmark; invisible blocks are zero."""
    dim = config.descriptor_dim
    out = np.zeros((landmarks.l, dim))
    vis = landmarks.visible
    if vis.any():
        out[vis] = sift_descriptors(image, landmarks.points[vis], config, config.patch_for(bbox))
    return out.reshape(-1)


class FeatureExtractor(Protocol):
    """Anything mapping (image, landmarks, bbox) to a fixed-length feature vector."""

    dim_per_landmark: int

    def __call__(self, image, landmarks: LandmarkSet2D, bbox=None) -> np.ndarray: ...


class SiftExtractor:
    """The default extractor: :func:`assemble_features` with a fixed config."""

    def __init__(self, config: FeatureConfig = FeatureConfig()):
        self.config = config
        self.dim_per_landmark = config.descriptor_dim

    def __call__(self, image, landmarks, bbox=None):
        return assemble_features(image, landmarks, self.config, bbox)


def heatmap(landmarks: LandmarkSet2D, width: int, height: int) -> np.ndarray:
    """``1 / (1 + distance to the nearest visible landmark)`` at every pixel.

    Returns a ``(height, width)`` array; all zeros when nothing is visible.
    """
    if width <= 0 or height <= 0:
        raise ValueError("heatmap dimensions must be positive")
    pts = landmarks.points[landmarks.visible]
    if pts.shape[0] == 0:
        return np.zeros((height, width))
    cols, rows = np.meshgrid(np.arange(width, dtype=np.float64),
                             np.arange(height, dtype=np.float64))
    d, _ = cKDTree(pts).query(np.column_stack([cols.ravel(), rows.ravel()]))
    return (1.0 / (1.0 + d)).reshape(height, width)
