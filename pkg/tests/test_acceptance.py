"""End-to-end acceptance checks, one test per criterion, each printing a pass/fail line."""
import time

import numpy as np
import pytest

from facecascade.camera import (LandmarkSet2D, fit_mapping, procrustes_align, rigid_icp,
                                visibility_mask, weak_perspective, yaw_rotation)
from facecascade.cascade import fit, train_cascade, train_shape_stage
from facecascade.metrics import mae_single, nme_single, npde_map
from facecascade.model_io import load_model, save_model
from facecascade.recognition import (ScoreMatrix, distance_matrix, distances_to_similarity, fuse_scores,
                                     rank1_identify, verify_metrics)
from facecascade.synth import SynthConfig, synth_faces, synth_linear_world, synth_pose_sweep

from helpers import random_rotation, rotation_about, solve_gauss_jordan, sphere_prior


def _rel(a, b):
    return np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)


def _area_weighted_normals(v, faces):
    """Per-vertex normals summed face by face, independent of the library's incidence matrix."""
    acc = np.zeros_like(v)
    for a, b, c in faces:
        fn = np.cross(v[b] - v[a], v[c] - v[a])
        acc[a] += fn
        acc[b] += fn
        acc[c] += fn
    return acc / np.linalg.norm(acc, axis=1, keepdims=True)


def _non_increasing(values, slack):
    return all(b <= a * (1 + slack) + 1e-300 for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------- 1

def test_01_linear_world_exact_recovery(acceptance):
    w = synth_linear_world(n=60, l=12, seed=0)
    assert len(w.samples) == 4 * max(128 * 12, 2 * 12)
    t0 = time.perf_counter()
    model = train_cascade(w.samples, w.prior, K=5, ridge=0.0, extractor=w.extractor)
    elapsed = time.perf_counter() - t0
    nme_k, mae_k = model.history["nme"][-1], model.history["mae"][-1]
    ok = nme_k < 1e-6 and mae_k < 1e-6 and elapsed < 60
    acceptance(1, "linear-world exact recovery", ok,
               f"N={len(w.samples)} NME={nme_k:.2e} MAE={mae_k:.2e} mm train={elapsed:.1f}s")


# ---------------------------------------------------------------- 2

def test_02_shape_stage_matches_normal_equations(acceptance):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        rows = 2 * int(rng.integers(3, 12))
        N = rows + int(rng.integers(1, 40))
        du = rng.normal(size=(rows, N))
        ds = rng.normal(size=(6 * int(rng.integers(4, 12)), N))
        gram = np.zeros((rows, rows))
        cross = np.zeros((ds.shape[0], rows))
        for i in range(N):
            gram += np.outer(du[:, i], du[:, i])
            cross += np.outer(ds[:, i], du[:, i])
        oracle = solve_gauss_jordan(gram, cross.T).T
        worst = max(worst, _rel(train_shape_stage(du, ds, 0.0).weights, oracle))
    acceptance(2, "shape-stage closed form vs normal equations", worst < 1e-8,
               f"20 instances, max relative error {worst:.2e}")


# ---------------------------------------------------------------- 3

def test_03_mapping_recovery(acceptance):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        pts = rng.normal(0, 50, (3, 68))
        true = np.hstack([rng.uniform(0.2, 3.0) * random_rotation(rng)[:2], rng.uniform(-200, 200, (2, 1))])
        u = true[:, :3] @ pts + true[:, 3:]
        m = np.asarray(fit_mapping(LandmarkSet2D(u.T), pts))
        worst = max(worst, np.abs(m - true).max())
    acceptance(3, "mapping recovery", worst < 1e-8, f"100 seeds, max entry error {worst:.2e}")


# ---------------------------------------------------------------- 4

def test_04_visibility_hemisphere(acceptance):
    shape, prior = sphere_prior(1000)
    normals = _area_weighted_normals(shape.vertices, prior.faces)
    frontal = visibility_mask(weak_perspective(np.eye(3), 1.0, (0.0, 0.0)), shape, prior)
    ok = np.array_equal(frontal, normals[:, 2] > 0)
    details = [f"0:{int(frontal.sum())}"]
    for theta in (-90.0, -60.0, -30.0, 30.0, 60.0, 90.0):
        r = yaw_rotation(theta)
        vis = visibility_mask(weak_perspective(r, 1.0, (0.0, 0.0)), shape, prior)
        expect = (normals @ r.T)[:, 2] > 0  # rotated normal faces the camera
        ok &= np.array_equal(vis, expect)
        # boundary moves with the yaw: the mean visible direction points along the view axis
        centre = shape.vertices[vis].mean(axis=0)
        azimuth = np.rad2deg(np.arctan2(-centre[0], centre[2]))
        ok &= abs(azimuth - theta) < 2.0
        details.append(f"{theta:+.0f}:{int(vis.sum())}")
    acceptance(4, "visibility hemisphere", bool(ok), "visible counts " + " ".join(details))


# ---------------------------------------------------------------- 5

def test_05_registration(acceptance, face68):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a = rng.normal(0, 40, (200, 3))
        b = a @ random_rotation(rng).T + rng.normal(0, 100, 3)
        worst = max(worst, procrustes_align(a, b)[2])
    _, faces = face68
    icp_worst, monotone, iters = 0.0, True, []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        target = faces[seed % len(faces)].pen.vertices
        shift = rng.normal(size=3)
        moved = target @ rotation_about(rng.normal(size=3), 5.0).T + 2.0 * shift / np.linalg.norm(shift)
        res = rigid_icp(moved, target)
        icp_worst = max(icp_worst, res.distance)
        monotone &= all(b <= a for a, b in zip(res.trace, res.trace[1:]))
        iters.append(res.iterations)
    ok = worst < 1e-9 and icp_worst < 1e-3 and monotone
    acceptance(5, "registration", ok,
               f"Procrustes max {worst:.2e} mm over 100, ICP max {icp_worst:.2e} mm over 20 "
               f"(<= {max(iters)} iters), monotone={monotone}")


# ---------------------------------------------------------------- 6

def test_06_metrics_hand_examples(acceptance):
    g = np.random.default_rng(1).normal(0, 20, (50, 3))
    checks = {}
    checks["MAE offset"] = abs(mae_single(g, g + [1.0, 0.0, 0.0], align="none") - 1.0)
    z = np.zeros((4, 3))
    z[:, 2] = [0.0, 10.0, 5.0, 2.0]
    e = z.copy()
    e[2, 2] += 1.0
    checks["NPDE"] = np.abs(npde_map(z, e) - [0, 0, 0.1, 0]).max()
    checks["NME"] = abs(nme_single(LandmarkSet2D([[10.0, 10.0]]), LandmarkSet2D([[12.0, 10.0]]),
                                   (0, 0, 100, 100)) - 0.02)
    gt = LandmarkSet2D([[0.0, 0.0], [10.0, 10.0], [20.0, 5.0]], [True, False, True])
    far = LandmarkSet2D([[3.0, 4.0], [900.0, -400.0], [20.0, 5.0]])
    masked = nme_single(gt, far, (0, 0, 50, 50))
    checks["mask"] = abs(masked - 2.5 / 50)
    unmasked = nme_single(LandmarkSet2D(gt.points, [True, True, True]), far, (0, 0, 50, 50))
    ok = max(checks.values()) <= 1e-12 and unmasked > masked
    acceptance(6, "metrics hand examples", ok,
               ", ".join(f"{k} {v:.1e}" for k, v in checks.items()) + f", toggled NME {unmasked:.3f}")


# ---------------------------------------------------------------- 7

def test_07_convergence_shape(acceptance):
    prior, faces = synth_faces(8, n=1200, l=68, expressions_per_subject=1, seed=0)
    samples = synth_pose_sweep(faces, prior, SynthConfig(landmark_noise=2.0, seed=1))
    h = train_cascade(samples, prior, K=5).history
    nme_ok, mae_ok = _non_increasing(h["nme"], 1e-3), _non_increasing(h["mae"], 1e-3)
    acceptance(7, "convergence shape", nme_ok and mae_ok,
               "NME " + " ".join(f"{x:.4f}" for x in h["nme"])
               + " | MAE " + " ".join(f"{x:.3f}" for x in h["mae"]))


# ---------------------------------------------------------------- 8

def _phi(x):
    from math import erf, sqrt
    return 0.5 * (1 + erf(x / sqrt(2)))


def test_08_recognition_sanity(acceptance, face68):
    _, faces = face68
    neutral = [f for f in faces if f.expression == "neutral"]
    labels = [f.subject for f in neutral]
    shapes = [f.pen for f in neutral]
    s3d = ScoreMatrix(distances_to_similarity(distance_matrix(shapes, shapes)), labels, labels)
    rng = np.random.default_rng(5)
    emb = rng.normal(size=(len(labels), 16))
    s2d = ScoreMatrix(distances_to_similarity(np.linalg.norm(emb[:, None] - emb[None], axis=2)), labels, labels)
    rank_ok = all(rank1_identify(fuse_scores(s2d, s3d, w))[1] == 100.0 for w in np.linspace(0, 1, 11))

    # 3 sigma of clearance on each side of the threshold: means 6 sigma apart
    d = 6.0
    rep = verify_metrics(rng.normal(d, 1, 5000), rng.normal(0, 1, 5000))
    eer_expect, auc_expect = 100 * _phi(-d / 2), 100 * _phi(d / np.sqrt(2))
    close = abs(rep.eer - eer_expect) < 0.2 and abs(rep.auc - auc_expect) < 0.2

    order_ok = True
    for seed in range(50):
        dm = np.random.default_rng(1000 + seed).uniform(0, 100, (6, 7))
        s = distances_to_similarity(dm)
        order = np.argsort(dm.ravel())
        order_ok &= bool(np.all(np.diff(s.ravel()[order]) < 0))
    ok = rank_ok and rep.eer < 1.0 and rep.auc > 99.0 and close and order_ok
    acceptance(8, "recognition sanity", ok,
               f"rank-1 100% at 11 weights={rank_ok}, EER {rep.eer:.3f}% (analytic {eer_expect:.3f}), "
               f"AUC {rep.auc:.3f}% (analytic {auc_expect:.3f}), order reversal x50={order_ok}")


# ---------------------------------------------------------------- 9 and 10

@pytest.fixture(scope="module")
def big_model():
    prior, faces = synth_faces(3, n=5996, l=68, expressions_per_subject=1, seed=0)
    cfg = SynthConfig(yaws=tuple(range(-60, 61, 30)), width=256, height=256, landmark_noise=1.0, seed=1)
    samples = synth_pose_sweep(faces, prior, cfg)
    return samples, train_cascade(samples, prior, K=5)


def test_09_throughput(acceptance, big_model):
    samples, model = big_model
    fit(samples[0].image, samples[0].bbox, model)  # warm caches
    times = []
    for s in samples:
        t0 = time.perf_counter()
        fit(s.image, s.bbox, model)
        times.append(time.perf_counter() - t0)
    med = 1000 * float(np.median(times))
    acceptance(9, "fit throughput", med <= 200.0,
               f"n={model.prior.n} l={model.prior.l} K={model.K}: median {med:.1f} ms, "
               f"max {1000 * max(times):.1f} ms over {len(times)} images")


def test_10_serialization(acceptance, tmp_path):
    prior, faces = synth_faces(3, n=600, l=20, expressions_per_subject=1, seed=2)
    samples = synth_pose_sweep(faces, prior, SynthConfig(yaws=(-30.0, 0.0, 30.0), width=96, height=96, seed=3))
    model = train_cascade(samples, prior, K=3)
    save_model(model, tmp_path / "m.fcm")
    back = load_model(tmp_path / "m.fcm")
    same = back.K == model.K and all(
        a.weights.tobytes() == b.weights.tobytes()
        for (u1, s1), (u2, s2) in zip(model.stages, back.stages) for a, b in ((u1, u2), (s1, s2)))
    same &= back.prior.mean_pen_shape.tobytes() == model.prior.mean_pen_shape.tobytes()
    same &= back.history == model.history and back.feature_config == model.feature_config
    fits_same = True
    for s in samples:
        r1, r2 = fit(s.image, s.bbox, model), fit(s.image, s.bbox, back)
        fits_same &= (r1.landmarks.points.tobytes() == r2.landmarks.points.tobytes()
                      and r1.pen_shape.vertices.tobytes() == r2.pen_shape.vertices.tobytes()
                      and r1.expressive_shape.vertices.tobytes() == r2.expressive_shape.vertices.tobytes()
                      and np.asarray(r1.mapping).tobytes() == np.asarray(r2.mapping).tobytes())
    acceptance(10, "model serialization", bool(same and fits_same),
               f"weights bit-exact={bool(same)}, {len(samples)} FitResults bit-identical={bool(fits_same)}")
