import numpy as np
import pytest

from facecascade.camera import LandmarkSet2D, project, visibility_mask, weak_perspective, yaw_rotation
from facecascade.dataset import check_consistent, kfold_split, load_prior, load_samples, save_prior, write_sweep
from facecascade.errors import DimensionError, SingularGramError
from facecascade.formats import read_manifest
from facecascade.shape_model import landmark_subshape
from facecascade.synth import (SynthConfig, canonical_landmarks, face_template, synth_faces,
                               synth_linear_world, synth_pose_sweep)
from facecascade.cascade import train_cascade


@pytest.fixture(scope="module")
def sweep():
    prior, faces = synth_faces(2, n=500, l=30, expressions_per_subject=1, seed=11)
    cfg = SynthConfig(width=64, height=64, landmark_noise=1.0, shape_noise=0.2, seed=5)
    return prior, faces, cfg, synth_pose_sweep(faces, prior, cfg)


def _mirror_pairs(xy):
    out = np.empty(len(xy), dtype=int)
    for i, (x, y) in enumerate(xy):
        d = np.hypot(xy[:, 0] + x, xy[:, 1] - y)
        out[i] = int(np.argmin(d))
        assert d[out[i]] < 1e-9
    return out


# ---------------------------------------------------------------- faces and template

def test_template_landmarks_on_mesh():
    verts, tri, idx = face_template(400, 68)
    np.testing.assert_array_equal(verts[idx, :2], canonical_landmarks(68))
    assert len(set(idx.tolist())) == 68
    a, b, c = verts[tri[:, 0], :2], verts[tri[:, 1], :2], verts[tri[:, 2], :2]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    assert np.all(cross > 0)


def test_canonical_layout_is_mirror_symmetric():
    _mirror_pairs(canonical_landmarks(68))


def test_faces_have_expected_structure(small_faces):
    prior, faces = small_faces
    assert len(faces) == 8
    assert {f.expression for f in faces} == {"neutral", "e0"}
    for f in faces:
        assert f.pen.n == prior.n
        if f.expression == "neutral":
            np.testing.assert_array_equal(f.expressive.vertices, f.pen.vertices)


def test_synth_faces_deterministic():
    a = synth_faces(2, n=200, l=10, seed=4)[1]
    b = synth_faces(2, n=200, l=10, seed=4)[1]
    for x, y in zip(a, b):
        assert x.expressive.vertices.tobytes() == y.expressive.vertices.tobytes()


# ---------------------------------------------------------------- pose sweep

def test_default_sweep_has_19_poses(sweep):
    _, faces, cfg, samples = sweep
    assert len(cfg.yaws) == 19
    assert len(samples) == 19 * len(faces)
    for f in faces:
        yaws = sorted(s.yaw for s in samples if s.subject == f.subject and s.expression == f.expression)
        assert yaws == list(np.arange(-90.0, 91.0, 10.0))


def test_frontal_visibility_symmetric(face68):
    prior, faces = face68
    mirror = _mirror_pairs(prior.template_points - prior.template_points.mean(axis=0))
    m = weak_perspective(yaw_rotation(0.0), 1.0, (0.0, 0.0))
    for s in [prior.mean_shape3d()] + [f.expressive for f in faces]:
        vis = visibility_mask(m, s, prior)
        np.testing.assert_array_equal(vis, vis[mirror])


@pytest.mark.parametrize("yaw,hidden_side", [(90.0, 1), (-90.0, -1)])
def test_profile_hides_far_side(face68, yaw, hidden_side):
    prior, faces = face68
    m = weak_perspective(yaw_rotation(yaw), 1.0, (0.0, 0.0))
    for f in faces:
        x = landmark_subshape(f.expressive, prior)[0]
        vis = visibility_mask(m, f.expressive, prior)
        far = hidden_side * x > 5.0
        near = -hidden_side * x > 5.0
        assert not vis[far].any()
        assert vis[near].all()


def test_sweep_geometry(sweep):
    prior, faces, cfg, samples = sweep
    s = samples[7]
    face = next(f for f in faces if f.subject == s.subject and f.expression == s.expression)
    pts = project(s.mapping, landmark_subshape(face.expressive, prior))
    x0, y0, w, h = s.bbox
    np.testing.assert_allclose([x0, y0, x0 + w, y0 + h],
                               [*pts.min(axis=0), *pts.max(axis=0)], atol=1e-9)
    noise = s.landmarks.points - pts
    assert 0.3 < noise.std() < 3.0  # landmark_noise = 1 px
    assert s.image.pixels.shape == (64, 64)
    assert s.scale == pytest.approx(0.7 * 64 / 200)
    np.testing.assert_array_equal(s.landmarks.visible, visibility_mask(s.mapping, face.expressive, prior))


def test_sweep_deterministic_and_worker_independent(sweep):
    prior, faces, cfg, samples = sweep
    again = synth_pose_sweep(faces, prior, cfg, workers=4)
    for a, b in zip(samples, again):
        assert a.sample_id == b.sample_id
        assert a.image.pixels.tobytes() == b.image.pixels.tobytes()
        assert a.landmarks.points.tobytes() == b.landmarks.points.tobytes()


def test_sweep_rejects_wrong_mesh_size(sweep, small_faces):
    prior, _, cfg, _ = sweep
    _, other = small_faces
    with pytest.raises(DimensionError):
        synth_pose_sweep(other[:1], prior, cfg)


# ---------------------------------------------------------------- linear world

def test_linear_world_same_seed():
    a = synth_linear_world(n=20, l=4, seed=9, descriptor_dim=8)
    b = synth_linear_world(n=20, l=4, seed=9, descriptor_dim=8)
    assert a.landmark_map.tobytes() == b.landmark_map.tobytes()
    for x, y in zip(a.samples, b.samples):
        assert x.landmarks.points.tobytes() == y.landmarks.points.tobytes()


def test_linear_world_generating_maps():
    w = synth_linear_world(n=20, l=4, seed=9, descriptor_dim=8)
    u0 = project(w.mapping, landmark_subshape(w.prior.mean_shape3d(), w.prior)).reshape(-1)
    for s in w.samples[:10]:
        du = s.landmarks.as_vector() - u0
        h = w.extractor(s.image, LandmarkSet2D(u0), s.bbox)
        np.testing.assert_allclose(w.landmark_map @ h, du, atol=1e-9)
        ds = np.concatenate([s.target.identity - w.prior.mean_pen_shape, s.target.expression_offset])
        np.testing.assert_allclose(w.shape_map @ du, ds, atol=1e-8)


def test_linear_world_small_n_singular():
    w = synth_linear_world(n=20, l=4, N=8, seed=9, descriptor_dim=8)
    with pytest.raises(SingularGramError):
        train_cascade(w.samples, w.prior, K=1, ridge=0.0, extractor=w.extractor)


# ---------------------------------------------------------------- on-disk datasets

def test_write_and_load_sweep(sweep, tmp_path):
    prior, faces, _, samples = sweep
    subset = samples[::5]
    folds = {sub: i for i, sub in enumerate(sorted({f.subject for f in faces}))}
    path = write_sweep(subset, prior, tmp_path, folds=folds)
    rows = read_manifest(path)
    assert len(rows) == len(subset)
    assert {r.fold for r in rows} <= {0, 1}
    loaded_prior = load_prior(tmp_path / "prior")
    np.testing.assert_allclose(loaded_prior.mean_pen_shape, prior.mean_pen_shape, rtol=1e-8)
    np.testing.assert_array_equal(loaded_prior.landmark_indices, prior.landmark_indices)
    back = load_samples(path, loaded_prior, workers=2)
    check_consistent(back, loaded_prior)
    for a, b in zip(subset, back):
        assert a.sample_id == b.sample_id and a.subject == b.subject and a.yaw == b.yaw
        np.testing.assert_array_equal(a.landmarks.points, b.landmarks.points)
        np.testing.assert_array_equal(np.rint(a.image.pixels * 255) / 255, b.image.pixels)
        np.testing.assert_allclose(b.target.expressive, a.target.expressive, rtol=1e-8, atol=1e-6)
        assert b.scale == a.scale


def test_load_rejects_wrong_prior(sweep, small_faces, tmp_path):
    prior, _, _, samples = sweep
    path = write_sweep(samples[:2], prior, tmp_path)
    other, _ = small_faces
    with pytest.raises(DimensionError):
        load_samples(path, other)


def test_prior_dir_errors(tmp_path, small_faces):
    prior, _ = small_faces
    save_prior(prior, tmp_path / "p")
    (tmp_path / "p" / "landmark_indices.txt").unlink()
    from facecascade.errors import FormatError
    with pytest.raises(FormatError, match="missing"):
        load_prior(tmp_path / "p")


# ---------------------------------------------------------------- k-fold

class _S:
    def __init__(self, subject):
        self.subject = subject


def test_kfold_100_subjects():
    samples = [_S(f"s{i:03d}") for i in range(100) for _ in range(3)]
    folds = kfold_split(samples, k=10, seed=1)
    assert [len({s.subject for s in f}) for f in folds] == [10] * 10
    seen = {}
    for j, f in enumerate(folds):
        for s in f:
            assert seen.setdefault(s.subject, j) == j
    assert len(seen) == 100


def test_kfold_uneven_and_deterministic():
    samples = [_S(f"s{i}") for i in range(23)]
    a = kfold_split(samples, k=10, seed=3)
    b = kfold_split(samples, k=10, seed=3)
    sizes = [len(f) for f in a]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == 23
    assert [[s.subject for s in f] for f in a] == [[s.subject for s in f] for f in b]


def test_kfold_errors():
    with pytest.raises(ValueError):
        kfold_split([_S("a"), _S("b")], k=3)
    with pytest.raises(ValueError):
        kfold_split([_S("a"), _S("b")], k=1)
