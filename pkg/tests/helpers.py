"""Small geometry builders shared by the test modules."""
import numpy as np
from scipy.spatial import ConvexHull

from facecascade.shape_model import Shape3D, ShapePrior


def sphere_mesh(n=1000, radius=1.0):
    """Fibonacci sphere with outward-wound convex-hull triangles."""
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = np.pi * (1 + 5 ** 0.5) * k
    v = radius * np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])
    faces = ConvexHull(v).simplices.copy()
    a, b, c = v[faces[:, 0]], v[faces[:, 1]], v[faces[:, 2]]
    inward = np.einsum("ij,ij->i", np.cross(b - a, c - a), a + b + c) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return v, faces


def sphere_prior(n=1000, landmark_indices=None):
    v, faces = sphere_mesh(n)
    idx = np.arange(n) if landmark_indices is None else np.asarray(landmark_indices)
    return Shape3D(v, faces), ShapePrior(v.reshape(-1), v[idx, :2].reshape(-1), idx, faces=faces)


def square_fan(reverse=False):
    """Centre vertex 0 with four neighbours on the unit square in the z=0 plane."""
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [-1, 0, 0], [0, -1, 0]], dtype=float)
    faces = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]])
    if reverse:
        faces = faces[:, ::-1]
    return v, faces


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotation_about(axis, degrees):
    axis = np.asarray(axis, float) / np.linalg.norm(axis)
    a = np.deg2rad(degrees)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(a) * k + (1 - np.cos(a)) * k @ k


def solve_gauss_jordan(a, b):
    """Solve a x = b by Gauss-Jordan elimination with partial pivoting, one column at a time."""
    n = a.shape[0]
    out = np.empty_like(b, dtype=float)
    for col in range(b.shape[1]):
        m = np.hstack([a.astype(float), b[:, col:col + 1].astype(float)])
        for i in range(n):
            p = i + int(np.argmax(np.abs(m[i:, i])))
            m[[i, p]] = m[[p, i]]
            m[i] /= m[i, i]
            for r in range(n):
                if r != i:
                    m[r] -= m[r, i] * m[i]
        out[:, col] = m[:, n]
    return out
