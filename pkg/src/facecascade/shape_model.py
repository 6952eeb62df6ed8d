"""Summation shape model: identity plus expression offset over a registered mesh.

Vector layouts follow the interleaved convention used everywhere in the
package: a 3n shape vector is ``(x1, y1, z1, x2, ...)`` and a 2l landmark
vector is ``(u1, v1, u2, v2, ...)``.  Shapes are in millimetres.

The 3D frame has x to the right, y pointing the same way as the image v
axis (down) and z towards the camera, so that the orthographic mapping
``[[1, 0, 0, 0], [0, 1, 0, 0]]`` draws a frontal face upright and surface
normals with positive z face the viewer.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError

__all__ = [
    "Shape3D",
    "ShapeState",
    "ShapePrior",
    "DegenerateNormalWarning",
    "compose_shape",
    "decompose_expression",
    "landmark_subshape",
    "vertex_normals",
    "mean_shape",
    "adjacency_from_faces",
]


class DegenerateNormalWarning(UserWarning):
    """Raised (as a warning) when a vertex neighbourhood has no usable normal."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Shape3D:
    """An n-vertex registered 3D shape, optionally with triangle faces."""

    vertices: np.ndarray
    faces: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, copy=True)
        if v.ndim == 1:
            if v.size % 3:
                raise DimensionError(f"shape vector length {v.size} is not a multiple of 3")
            v = v.reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise DimensionError(f"vertices must be n x 3, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("shape has non-finite coordinates")
        object.__setattr__(self, "vertices", _readonly(v))
        if self.faces is not None:
            f = np.array(self.faces, dtype=np.int64, copy=True).reshape(-1, 3)
            if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
                raise DimensionError("face index out of range")
            object.__setattr__(self, "faces", _readonly(f))

    @property
    def n(self) -> int:
        return self.vertices.shape[0]

    def as_vector(self) -> np.ndarray:
        return self.vertices.reshape(-1).copy()

    @classmethod
    def from_vector(cls, vec, faces=None) -> "Shape3D":
        return cls(np.asarray(vec, dtype=np.float64).reshape(-1, 3), faces)

    def with_vertices(self, vertices) -> "Shape3D":
        return Shape3D(vertices, self.faces)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.vertices, dtype=dtype)


@dataclass(frozen=True, eq=False)
class ShapeState:
    """PEN identity shape plus expression offset, both as 3n vectors."""

    identity: np.ndarray
    expression_offset: np.ndarray

    def __post_init__(self):
        ident = np.array(self.identity, dtype=np.float64, copy=True).reshape(-1)
        off = np.array(self.expression_offset, dtype=np.float64, copy=True).reshape(-1)
        if ident.shape != off.shape:
            raise DimensionError(f"identity has {ident.size} entries, expression offset {off.size}")
        if ident.size % 3:
            raise DimensionError("shape vectors must have 3n entries")
        object.__setattr__(self, "identity", _readonly(ident))
        object.__setattr__(self, "expression_offset", _readonly(off))

    @property
    def n(self) -> int:
        return self.identity.size // 3

    @property
    def expressive(self) -> np.ndarray:
        return self.identity + self.expression_offset

    def stacked(self) -> np.ndarray:
        """The 6n vector ``[identity; expression_offset]`` regressed by the shape stage."""
        return np.concatenate([self.identity, self.expression_offset])

    @classmethod
    def neutral(cls, mean_pen) -> "ShapeState":
        mean_pen = np.asarray(mean_pen, dtype=np.float64).reshape(-1)
        return cls(mean_pen, np.zeros_like(mean_pen))


def adjacency_from_faces(faces: np.ndarray, n: int) -> tuple:
    """Symmetric one-ring neighbour lists from a triangle list."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.concatenate([edges, edges[:, ::-1]])
    edges = np.unique(edges, axis=0)
    starts = np.searchsorted(edges[:, 0], np.arange(n + 1))
    return tuple(_readonly(edges[starts[i]:starts[i + 1], 1].copy()) for i in range(n))


@dataclass(frozen=True, eq=False)
class ShapePrior:
    """Mean PEN shape, frontal landmark template and landmark-vertex correspondence.

    ``adjacency`` holds per-vertex neighbour lists.  When ``faces`` is given,
    normals are area-weighted over incident triangles; otherwise the order of
    each neighbour list is taken as a fan around the vertex.
    """

    mean_pen_shape: np.ndarray
    mean_landmarks_2d: np.ndarray
    landmark_indices: np.ndarray
    adjacency: tuple = field(default=None)
    faces: np.ndarray | None = None

    def __post_init__(self):
        mean = np.array(self.mean_pen_shape, dtype=np.float64, copy=True).reshape(-1)
        if mean.size % 3:
            raise DimensionError("mean PEN shape must have 3n entries")
        n = mean.size // 3
        tmpl = np.array(self.mean_landmarks_2d, dtype=np.float64, copy=True).reshape(-1)
        idx = np.array(self.landmark_indices, dtype=np.int64, copy=True).reshape(-1)
        if tmpl.size != 2 * idx.size:
            raise DimensionError(f"template has {tmpl.size // 2} landmarks, index map has {idx.size}")
        if idx.size == 0:
            raise DimensionError("at least one landmark is required")
        if idx.min() < 0 or idx.max() >= n:
            raise DimensionError("landmark index out of range")
        if np.unique(idx).size != idx.size:
            raise DimensionError("landmark indices must be distinct")
        faces = self.faces
        if faces is not None:
            faces = _readonly(np.array(faces, dtype=np.int64, copy=True).reshape(-1, 3))
            if faces.size and (faces.min() < 0 or faces.max() >= n):
                raise DimensionError("face index out of range")
        adjacency = self.adjacency
        if adjacency is None:
            if faces is None:
                raise ValueError("either adjacency or faces is required")
            adjacency = adjacency_from_faces(faces, n)
        else:
            adjacency = tuple(_readonly(np.array(a, dtype=np.int64).reshape(-1)) for a in adjacency)
            if len(adjacency) != n:
                raise DimensionError(f"adjacency has {len(adjacency)} entries for {n} vertices")
            _check_symmetric(adjacency)
        for i in idx:
            if len(adjacency[i]) < 2:
                raise ValueError(f"landmark vertex {i} has fewer than 2 neighbours")
        object.__setattr__(self, "mean_pen_shape", _readonly(mean))
        object.__setattr__(self, "mean_landmarks_2d", _readonly(tmpl))
        object.__setattr__(self, "landmark_indices", _readonly(idx))
        object.__setattr__(self, "adjacency", adjacency)
        object.__setattr__(self, "faces", faces)

    @property
    def n(self) -> int:
        return self.mean_pen_shape.size // 3

    @property
    def l(self) -> int:  # noqa: E743
        return self.landmark_indices.size

    @property
    def template_points(self) -> np.ndarray:
        return self.mean_landmarks_2d.reshape(-1, 2)

    def mean_shape3d(self) -> Shape3D:
        return Shape3D(self.mean_pen_shape.reshape(-1, 3), self.faces)

    @cached_property
    def _incidence(self):
        # vertex x face incidence, used to sum face normals onto vertices
        f = self.faces
        rows = f.reshape(-1)
        cols = np.repeat(np.arange(f.shape[0]), 3)
        return sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.n, f.shape[0]))

    @cached_property
    def _landmark_plan(self):
        # faces touching a landmark, and the dense landmark x face incidence over them
        sub = self._incidence[self.landmark_indices]
        face_ids = np.unique(sub.indices)
        return face_ids, np.asarray(sub[:, face_ids].todense())


def _check_symmetric(adjacency):
    pairs = set()
    for i, nbrs in enumerate(adjacency):
        for j in nbrs:
            pairs.add((i, int(j)))
    for i, j in pairs:
        if (j, i) not in pairs:
            raise ValueError(f"adjacency is not symmetric: {i} -> {j} without {j} -> {i}")


def _as_vector(x, name) -> np.ndarray:
    if isinstance(x, Shape3D):
        return x.vertices.reshape(-1)
    return np.asarray(x, dtype=np.float64).reshape(-1)


def compose_shape(state: ShapeState, prior: ShapePrior | None = None) -> Shape3D:
    """Expressive shape ``identity + expression_offset`` as an n x 3 shape."""
    if prior is not None and state.n != prior.n:
        raise DimensionError(f"state has {state.n} vertices, prior has {prior.n}")
    faces = prior.faces if prior is not None else None
    return Shape3D(state.expressive.reshape(-1, 3), faces)


def decompose_expression(full, pen, mean) -> Shape3D:
    """Expression shape ``full - pen + mean`` used as the training target."""
    f, p, m = (_as_vector(x, nm) for x, nm in ((full, "full"), (pen, "pen"), (mean, "mean")))
    if not (f.size == p.size == m.size):
        raise DimensionError(f"vertex counts differ: {f.size // 3}, {p.size // 3}, {m.size // 3}")
    faces = full.faces if isinstance(full, Shape3D) else None
    return Shape3D((f - p + m).reshape(-1, 3), faces)


def landmark_subshape(shape, prior: ShapePrior) -> np.ndarray:
    """3 x l matrix of landmark vertex coordinates, in landmark order."""
    v = _as_vector(shape, "shape").reshape(-1, 3)
    if v.shape[0] != prior.n:
        raise DimensionError(f"shape has {v.shape[0]} vertices, prior has {prior.n}")
    return v[prior.landmark_indices].T.copy()


def vertex_normals(shape, prior: ShapePrior, indices: Sequence[int] | None = None,
                   return_degenerate: bool = False):
    """Unit surface normals at every vertex (or only at ``indices``).

    Triangulated priors use the area-weighted sum of incident face normals;
    adjacency-only priors sum the cross products of consecutive neighbours in
    the stored fan order.  Vertices whose neighbourhood cancels out get +z
    and a :class:`DegenerateNormalWarning`.
    """
    v = _as_vector(shape, "shape").reshape(-1, 3)
    if v.shape[0] != prior.n:
        raise DimensionError(f"shape has {v.shape[0]} vertices, prior has {prior.n}")
    idx = np.arange(prior.n) if indices is None else np.asarray(indices, dtype=np.int64)

    if prior.faces is not None and prior.faces.size:
        if indices is not None and indices is prior.landmark_indices:
            face_ids, inc = prior._landmark_plan
            f = prior.faces[face_ids]
        else:
            f = prior.faces
            inc = prior._incidence if indices is None else prior._incidence[idx]
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        acc = np.asarray(inc @ fn)
        scale = np.asarray(inc @ np.linalg.norm(fn, axis=1)).reshape(-1)
    else:
        acc = np.zeros((idx.size, 3))
        scale = np.zeros(idx.size)
        for k, i in enumerate(idx):
            nb = prior.adjacency[i]
            d = v[nb] - v[i]
            if len(nb) < 3:
                c = np.cross(d[0], d[-1])[None, :]
            else:
                c = np.cross(d, np.roll(d, -1, axis=0))
            acc[k] = c.sum(axis=0)
            scale[k] = np.linalg.norm(c, axis=1).sum()

    norms = np.linalg.norm(acc, axis=1)
    bad = ~(norms > 1e-12 * scale) | (norms == 0)
    out = np.empty_like(acc)
    good = ~bad
    out[good] = acc[good] / norms[good, None]
    out[bad] = (0.0, 0.0, 1.0)
    degenerate = idx[bad]
    if degenerate.size:
        warnings.warn(f"degenerate normal at vertices {degenerate.tolist()}; using +z",
                      DegenerateNormalWarning, stacklevel=2)
    if return_degenerate:
        return out, degenerate
    return out


def mean_shape(shapes: Iterable) -> Shape3D:
    """Elementwise mean of registered shapes."""
    shapes = list(shapes)
    if not shapes:
        raise ValueError("mean_shape needs at least one shape")
    arrs = [_as_vector(s, "shape") for s in shapes]
    size = arrs[0].size
    if any(a.size != size for a in arrs):
        raise DimensionError("shapes have different vertex counts")
    faces = shapes[0].faces if isinstance(shapes[0], Shape3D) else None
    return Shape3D(np.mean(np.stack(arrs), axis=0).reshape(-1, 3), faces)
