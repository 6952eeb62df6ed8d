import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from facecascade.camera import (LandmarkSet2D, MappingMatrix, RigidTransform, fit_mapping,
                                init_landmarks, landmark_visibility, procrustes_align, project,
                                rigid_icp, visibility_mask, weak_perspective, yaw_rotation)
from facecascade.errors import (DegenerateGeometryError, DimensionError, InvalidMappingError,
                                SingularFitError)
from facecascade.shape_model import Shape3D, ShapePrior, vertex_normals
from helpers import random_rotation, rotation_about, sphere_prior

ORTHO = np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]])


# ---------------------------------------------------------------- types

def test_mapping_shape_checked():
    with pytest.raises(DimensionError):
        MappingMatrix(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        MappingMatrix(np.full((2, 4), np.inf))


def test_landmarks_default_visible():
    lm = LandmarkSet2D(np.zeros((3, 2)))
    assert lm.visible.all() and lm.l == 3
    with pytest.raises(DimensionError):
        LandmarkSet2D(np.zeros((3, 2)), [True, False])


def test_rigid_transform_compose():
    rng = np.random.default_rng(0)
    a = RigidTransform(random_rotation(rng), rng.normal(size=3), 1.5)
    b = RigidTransform(random_rotation(rng), rng.normal(size=3), 0.7)
    p = rng.normal(size=(5, 3))
    np.testing.assert_allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)


# ---------------------------------------------------------------- projection

def test_project_orthographic():
    p = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    np.testing.assert_array_equal(project(ORTHO, p), [[1, 3], [2, 4]])


def test_project_translation_only():
    m = np.zeros((2, 4))
    m[:, 3] = (7.0, -2.0)
    out = project(m, np.zeros((3, 5)))
    np.testing.assert_array_equal(out, np.tile([7.0, -2.0], (5, 1)))


def test_project_matches_per_column_oracle():
    rng = np.random.default_rng(1)
    m = rng.normal(size=(2, 4))
    p = rng.normal(size=(3, 30))
    oracle = np.array([m @ np.append(p[:, j], 1.0) for j in range(30)])
    np.testing.assert_allclose(project(m, p), oracle, atol=1e-12)


# ---------------------------------------------------------------- mapping fit

def _normal_equations(u, p):
    a = np.vstack([p, np.ones(p.shape[1])]).T
    return np.linalg.solve(a.T @ a, a.T @ u).T


def test_fit_mapping_exact_recovery():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(2, 4))
    p = rng.normal(size=(3, 68)) * 50
    est = fit_mapping(project(m, p), p)
    assert np.abs(np.asarray(est) - m).max() < 1e-8


def test_fit_mapping_agrees_with_normal_equations():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(3, 40)) * 30
    u = rng.normal(size=(40, 2)) * 100
    np.testing.assert_allclose(np.asarray(fit_mapping(u, p)), _normal_equations(u, p), atol=1e-8)


def test_fit_mapping_single_point_is_singular():
    p = np.ones((3, 10))
    with pytest.raises(SingularFitError, match="rank 1"):
        fit_mapping(np.zeros((10, 2)), p)


def test_fit_mapping_coplanar_is_singular():
    rng = np.random.default_rng(4)
    p = rng.normal(size=(3, 20))
    p[2] = 0.0
    with pytest.raises(SingularFitError) as err:
        fit_mapping(rng.normal(size=(20, 2)), p)
    assert err.value.rank == 3


def test_fit_mapping_orthographic_frontal():
    rng = np.random.default_rng(5)
    p = rng.normal(size=(3, 12))
    m = np.asarray(fit_mapping(project(ORTHO, p), p))
    np.testing.assert_allclose(m[0, :3], [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(m[1, :3], [0, 1, 0], atol=1e-12)


def test_fit_mapping_idempotent_on_own_projection():
    rng = np.random.default_rng(6)
    p = rng.normal(size=(3, 25))
    m1 = fit_mapping(rng.normal(size=(25, 2)), p)
    m2 = fit_mapping(project(m1, p), p)
    np.testing.assert_allclose(np.asarray(m2), np.asarray(m1), atol=1e-8)


@settings(max_examples=25)
@given(st.integers(0, 10_000))
def test_fit_mapping_local_optimality(seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(3, 15))
    u = rng.normal(size=(15, 2))
    m = np.asarray(fit_mapping(u, p))
    res = np.sum((project(m, p) - u) ** 2)
    for _ in range(5):
        e = rng.normal(size=(2, 4)) * 1e-3
        assert res <= np.sum((project(m + e, p) - u) ** 2) + 1e-12


# ---------------------------------------------------------------- visibility

def test_visibility_basic_cases():
    assert landmark_visibility(ORTHO, [0, 0, 1]) == 1.0
    assert landmark_visibility(ORTHO, [0, 0, -1]) == 0.0
    assert landmark_visibility(ORTHO, [1, 0, 0]) == 0.5


def test_visibility_errors():
    bad = ORTHO.copy()
    bad[1, :3] = 0
    with pytest.raises(InvalidMappingError):
        landmark_visibility(bad, [0, 0, 1])
    with pytest.raises(ValueError):
        landmark_visibility(ORTHO, [0, 0, 2])


@settings(max_examples=50)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.integers(0, 1000))
def test_visibility_row_scale_invariant(a, b, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(2, 4))
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    scaled = m * np.array([[a], [b]])
    assert landmark_visibility(m, n) == landmark_visibility(scaled, n)


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_visibility_of_opposite_normals_sums_to_one(seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(2, 4))
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    assert landmark_visibility(m, n) + landmark_visibility(m, -n) == 1.0


def test_visibility_mask_sphere_hemisphere():
    shape, prior = sphere_prior(1000)
    normals = vertex_normals(shape, prior)
    np.testing.assert_array_equal(visibility_mask(ORTHO, shape, prior), normals[:, 2] > 0)


def test_visibility_mask_180_mirrors(face68):
    prior, faces = face68
    shape = faces[0].expressive
    front = visibility_mask(weak_perspective(yaw_rotation(0), 1.0, (0, 0)), shape, prior)
    back = visibility_mask(weak_perspective(yaw_rotation(180), 1.0, (0, 0)), shape, prior)
    assert front.all()
    np.testing.assert_array_equal(back, ~front)


def test_visibility_mask_face_frontal_matches_sign_oracle(face68):
    prior, faces = face68
    shape = faces[1].expressive
    normals = vertex_normals(shape, prior)[prior.landmark_indices]
    np.testing.assert_array_equal(visibility_mask(ORTHO, shape, prior), normals[:, 2] > 0)


# ---------------------------------------------------------------- initialisation

def _template_prior(points):
    l = points.shape[0]
    rng = np.random.default_rng(0)
    v = rng.normal(size=(l + 3, 3))
    from scipy.spatial import ConvexHull
    faces = ConvexHull(v).simplices
    return ShapePrior(v.reshape(-1), points.reshape(-1), np.arange(l), faces=faces)


def test_init_template_bbox_is_identity():
    t = np.array([[10.0, 20.0], [50.0, 25.0], [30.0, 60.0], [12.0, 55.0]])
    prior = _template_prior(t)
    out = init_landmarks(prior, (10.0, 20.0, 40.0, 40.0))
    np.testing.assert_allclose(out.points, t, atol=1e-12)
    assert out.visible.all()


def test_init_doubled_box_doubles_offsets():
    t = np.array([[10.0, 20.0], [50.0, 25.0], [30.0, 60.0], [12.0, 55.0]])
    prior = _template_prior(t)
    centre = np.array([30.0, 40.0])
    out = init_landmarks(prior, (-10.0, 0.0, 80.0, 80.0))
    np.testing.assert_allclose(out.points - centre, 2.0 * (t - centre), atol=1e-12)


@settings(max_examples=50)
@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(1, 1000), st.floats(1, 1000))
def test_init_preserves_box_area(x, y, w, h):
    t = np.array([[10.0, 20.0], [50.0, 25.0], [30.0, 60.0], [12.0, 55.0]])
    out = init_landmarks(_template_prior(t), (x, y, w, h)).points
    span = out.max(axis=0) - out.min(axis=0)
    assert abs(span[0] * span[1] - w * h) <= 1e-6 * w * h
    np.testing.assert_allclose((out.max(axis=0) + out.min(axis=0)) / 2, [x + w / 2, y + h / 2],
                               atol=1e-9 * (1 + abs(x) + abs(y) + w + h))


def test_init_degenerate_box():
    t = np.array([[10.0, 20.0], [50.0, 25.0], [30.0, 60.0], [12.0, 55.0]])
    with pytest.raises(DegenerateGeometryError):
        init_landmarks(_template_prior(t), (0, 0, 0, 10))


# ---------------------------------------------------------------- Procrustes

def test_procrustes_identity():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(30, 3))
    tr, aligned, d = procrustes_align(a, a)
    np.testing.assert_allclose(tr.rotation, np.eye(3), atol=1e-12)
    assert d < 1e-12


def test_procrustes_recovers_rigid():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(50, 3)) * 40
    r, t = random_rotation(rng), rng.normal(size=3) * 20
    b = a @ r.T + t
    tr, _, d = procrustes_align(Shape3D(a), Shape3D(b))
    np.testing.assert_allclose(tr.rotation, r, atol=1e-12)
    np.testing.assert_allclose(tr.translation, t, atol=1e-9)
    assert d < 1e-9
    assert abs(np.linalg.det(tr.rotation) - 1) < 1e-9


def test_procrustes_pure_scale():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(20, 3))
    tr, _, d = procrustes_align(a, 2 * a, with_scale=True)
    assert abs(tr.scale - 2.0) < 1e-12 and d < 1e-9


def test_procrustes_never_reflects():
    rng = np.random.default_rng(10)
    a = rng.normal(size=(20, 3))
    b = a * np.array([-1, 1, 1])
    tr, _, _ = procrustes_align(a, b)
    assert abs(np.linalg.det(tr.rotation) - 1) < 1e-9


def test_procrustes_errors():
    with pytest.raises(DegenerateGeometryError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateGeometryError):
        procrustes_align(line, line)
    with pytest.raises(DimensionError):
        procrustes_align(np.zeros((4, 3)), np.zeros((5, 3)))


# ---------------------------------------------------------------- ICP

def test_icp_identity(face68):
    _, faces = face68
    v = faces[0].pen.vertices
    res = rigid_icp(v, v)
    assert res.distance == 0.0 and res.iterations == 0


def test_icp_small_perturbation(face68):
    _, faces = face68
    v = faces[0].pen.vertices
    rng = np.random.default_rng(11)
    r = rotation_about(rng.normal(size=3), 5.0)
    t = rng.normal(size=3)
    t *= 2.0 / np.linalg.norm(t)
    res = rigid_icp(v @ r.T + t, v)
    assert res.distance < 1e-3
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    tr, dist = res
    assert dist == res.distance


def test_icp_subsampled(face68):
    _, faces = face68
    v = faces[0].pen.vertices
    rng = np.random.default_rng(12)
    r = rotation_about(rng.normal(size=3), 3.0)
    sub = (v @ r.T + 1.0)[::2]
    res = rigid_icp(sub, v)
    from scipy.spatial import cKDTree
    pitch = np.median(cKDTree(v).query(v, k=2)[0][:, 1])
    assert res.distance < pitch


def test_icp_matches_procrustes_when_correspondence_is_true():
    rng = np.random.default_rng(13)
    a = rng.normal(size=(40, 3)) * 10
    b = a @ rotation_about([0, 1, 0], 2.0).T + rng.normal(size=(40, 3)) * 0.01
    _, _, d_proc = procrustes_align(a, b)
    d_icp = rigid_icp(a, b, max_iters=1).distance
    assert abs(d_icp - d_proc) < 1e-12


def test_icp_empty():
    with pytest.raises(DegenerateGeometryError):
        rigid_icp(np.zeros((0, 3)), np.zeros((4, 3)))
