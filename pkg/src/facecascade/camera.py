"""Weak-perspective mapping, landmark visibility and rigid registration."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import (DegenerateGeometryError, DimensionError, InvalidMappingError,
                     SingularFitError)
from .shape_model import Shape3D, ShapePrior, vertex_normals

__all__ = [
    "MappingMatrix",
    "LandmarkSet2D",
    "RigidTransform",
    "ICPResult",
    "project",
    "fit_mapping",
    "landmark_visibility",
    "visibility_mask",
    "init_landmarks",
    "procrustes_align",
    "rigid_icp",
    "yaw_rotation",
    "weak_perspective",
]


@dataclass(frozen=True, eq=False)
class MappingMatrix:
    """2 x 4 weak-perspective map from homogeneous 3D points to pixels."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries, dtype=np.float64, copy=True)
        if m.shape != (2, 4):
            raise DimensionError(f"mapping matrix must be 2 x 4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("mapping matrix has non-finite entries")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def m1(self) -> np.ndarray:
        return self.entries[0, :3]

    @property
    def m2(self) -> np.ndarray:
        return self.entries[1, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.entries[:, 3]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


@dataclass(frozen=True, eq=False)
class LandmarkSet2D:
    """l landmark positions (pixels) with per-landmark visibility."""

    points: np.ndarray
    visible: np.ndarray | None = None

    def __post_init__(self):
        p = np.array(self.points, dtype=np.float64, copy=True)
        if p.ndim == 1:
            p = p.reshape(-1, 2)
        if p.ndim != 2 or p.shape[1] != 2:
            raise DimensionError(f"landmarks must be l x 2, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("landmarks have non-finite coordinates")
        if self.visible is None:
            vis = np.ones(p.shape[0], dtype=bool)
        else:
            vis = np.array(self.visible, dtype=bool, copy=True).reshape(-1)
        if vis.size != p.shape[0]:
            raise DimensionError(f"{p.shape[0]} landmarks but {vis.size} visibility flags")
        p.setflags(write=False)
        vis.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "visible", vis)

    @property
    def l(self) -> int:  # noqa: E743
        return self.points.shape[0]

    def as_vector(self) -> np.ndarray:
        return self.points.reshape(-1).copy()

    @classmethod
    def from_vector(cls, vec, visible=None) -> "LandmarkSet2D":
        return cls(np.asarray(vec, dtype=np.float64).reshape(-1, 2), visible)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> scale * rotation @ x + translation``."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return self.scale * p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """The transform applying ``other`` first, then ``self``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.scale * self.rotation @ other.translation + self.translation,
                              self.scale * other.scale)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), 1.0)


def _points3(points3d) -> np.ndarray:
    p = np.asarray(points3d, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] != 3:
        raise DimensionError(f"3D points must be 3 x l, got {p.shape}")
    return p


def project(M, points3d) -> np.ndarray:
    """Map each column ``p`` of a 3 x l array to ``M @ (p, 1)``; returns l x 2."""
    m = np.asarray(M, dtype=np.float64)
    p = _points3(points3d)
    return (m[:, :3] @ p + m[:, 3:4]).T


def fit_mapping(landmarks, points3d) -> MappingMatrix:
    """Least-squares 2 x 4 mapping from 3D landmark columns to 2D landmarks."""
    u = np.asarray(landmarks.points if isinstance(landmarks, LandmarkSet2D) else landmarks,
                   dtype=np.float64).reshape(-1, 2)
    p = _points3(points3d)
    if p.shape[1] != u.shape[0]:
        raise DimensionError(f"{u.shape[0]} landmarks but {p.shape[1]} 3D points")
    a = np.vstack([p, np.ones((1, p.shape[1]))]).T
    x, _, rank, sv = np.linalg.lstsq(a, u, rcond=None)
    if rank < 4:
        raise SingularFitError(rank)
    return MappingMatrix(x.T)


def _cross_axis(M) -> np.ndarray:
    m = np.asarray(M, dtype=np.float64)
    r1, r2 = m[0, :3], m[1, :3]
    n1, n2 = np.linalg.norm(r1), np.linalg.norm(r2)
    if n1 == 0 or n2 == 0:
        raise InvalidMappingError("mapping matrix has a zero rotation row")
    return np.cross(r1 / n1, r2 / n2)


def landmark_visibility(M, normal) -> float:
    """Visibility ``(1 + sgn(n . (m1/|m1| x m2/|m2|))) / 2`` in {0, 0.5, 1}."""
    n = np.asarray(normal, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(n) - 1.0) > 1e-6:
        raise ValueError("normal must be unit length")
    return 0.5 * (1.0 + float(np.sign(n @ _cross_axis(M))))


def visibility_mask(M, shape, prior: ShapePrior) -> np.ndarray:
    """Per-landmark visibility flags; grazing landmarks count as invisible."""
    normals = vertex_normals(shape, prior, indices=prior.landmark_indices)
    return normals @ _cross_axis(M) > 0


def init_landmarks(prior: ShapePrior, bbox) -> LandmarkSet2D:
    """Place the frontal template into ``bbox = (x, y, w, h)``.

    Uniform scale from the ratio of box areas, no rotation, box centres
    aligned; every landmark starts visible.
    """
    x, y, w, h = (float(b) for b in bbox)
    if not (w > 0 and h > 0):
        raise DegenerateGeometryError(f"bounding box must have positive size, got {w} x {h}")
    t = prior.template_points
    lo, hi = t.min(axis=0), t.max(axis=0)
    tw, th = hi - lo
    if not (tw > 0 and th > 0):
        raise DegenerateGeometryError("landmark template has a degenerate bounding box")
    s = np.sqrt((w * h) / (tw * th))
    centre = np.array([x + w / 2.0, y + h / 2.0])
    pts = (t - (lo + hi) / 2.0) * s + centre
    return LandmarkSet2D(pts, np.ones(prior.l, dtype=bool))


def yaw_rotation(degrees: float) -> np.ndarray:
    """Rotation about the vertical (y) axis."""
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def weak_perspective(rotation, scale: float, translation) -> MappingMatrix:
    """Mapping ``scale * rotation[:2]`` with a pixel translation column."""
    r = np.asarray(rotation, dtype=np.float64)
    return MappingMatrix(np.hstack([scale * r[:2], np.asarray(translation, float).reshape(2, 1)]))


def _as_points(x) -> np.ndarray:
    if isinstance(x, Shape3D):
        return x.vertices
    p = np.asarray(x, dtype=np.float64)
    return p.reshape(-1, 3)


def _fit_similarity(a: np.ndarray, b: np.ndarray, with_scale: bool) -> RigidTransform:
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    a0, b0 = a - ca, b - cb
    cov = b0.T @ a0
    u, sv, vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        d[2] = -1.0
    r = (u * d) @ vt
    if with_scale:
        var = np.sum(a0 * a0)
        s = float(np.sum(sv * d) / var)
    else:
        s = 1.0
    return RigidTransform(r, cb - s * r @ ca, s)


def procrustes_align(A, B, with_scale: bool = False):
    """Align ``A`` onto ``B`` by index correspondence.

    Returns ``(transform, aligned_A, mean_distance)`` where the transform
    minimises ``sum |s R a_i + t - b_i|^2`` with ``det(R) = +1``.
    """
    a, b = _as_points(A), _as_points(B)
    if a.shape != b.shape:
        raise DimensionError(f"point sets differ in size: {a.shape[0]} vs {b.shape[0]}")
    a0 = a - a.mean(axis=0)
    if a.shape[0] < 3 or np.linalg.matrix_rank(a0, tol=1e-9 * max(1.0, np.abs(a0).max())) < 2:
        raise DegenerateGeometryError("need at least 3 non-collinear points")
    tr = _fit_similarity(a, b, with_scale)
    aligned = tr.apply(a)
    dist = float(np.mean(np.linalg.norm(aligned - b, axis=1)))
    if isinstance(A, Shape3D):
        aligned = A.with_vertices(aligned)
    return tr, aligned, dist


@dataclass(frozen=True)
class ICPResult:
    transform: RigidTransform
    distance: float
    trace: tuple
    iterations: int

    def __iter__(self):
        # unpack as (transform, distance)
        return iter((self.transform, self.distance))


def _principal_axes_starts(a: np.ndarray, b: np.ndarray) -> list:
    """Proper rotations mapping the principal axes of ``a`` onto those of ``b``."""
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    _, va = np.linalg.eigh(np.cov((a - ca).T))
    _, vb = np.linalg.eigh(np.cov((b - cb).T))
    out = []
    for signs in itertools.product((1.0, -1.0), repeat=3):
        r = (vb * np.array(signs)) @ va.T
        if np.linalg.det(r) > 0:
            out.append(RigidTransform(r, cb - r @ ca))
    return out


def rigid_icp(A, B, max_iters: int = 50, rel_tol: float = 1e-6,
              initial: RigidTransform | None = None, prealign: bool = True) -> ICPResult:
    """Rigidly register ``A`` onto ``B`` without known correspondence.

    Each iteration matches every point of the moved ``A`` to its nearest
    neighbour in ``B`` and refits the rigid transform in closed form.  A
    step that would increase the mean closest-point distance is rejected
    and iteration stops, so the distance trace never increases.

    Without ``initial``, the start is whichever of the identity and the
    principal-axes alignments gives the smaller mean closest-point
    distance (``prealign=False`` keeps the identity).
    """
    a, b = _as_points(A), _as_points(B)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise DegenerateGeometryError("ICP needs non-empty point sets")
    tree = cKDTree(b)
    if initial is not None:
        starts = [initial]
    else:
        starts = [RigidTransform.identity()]
        if prealign and min(a.shape[0], b.shape[0]) >= 4:
            starts += _principal_axes_starts(a, b)
    best = None
    for cand in starts:
        dist, nn = tree.query(cand.apply(a))
        if best is None or dist.mean() < best[0]:
            best = (float(dist.mean()), nn, cand)
    current, nn, tr = best
    trace = [current]
    it = 0
    while it < max_iters and current > 0.0:
        it += 1
        step = _fit_similarity(a, b[nn], with_scale=False)
        d_new, nn_new = tree.query(step.apply(a))
        new = float(np.mean(d_new))
        if new > current:
            break
        tr, nn = step, nn_new
        change = (current - new) / current
        current = new
        trace.append(current)
        if change < rel_tol:
            break
    return ICPResult(tr, current, tuple(trace), it)
