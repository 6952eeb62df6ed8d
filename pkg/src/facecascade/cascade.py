"""Cascaded coupled regressors: training and inference.

Each stage k applies three steps to every face:

1. landmark update ``U_hat = U + R_U h(I, U)`` from local texture features;
2. shape update ``[dS_id; dS_exp] = R_S (U_hat - U)``;
3. refinement: fit the 2 x 4 mapping between ``U_hat`` and the landmark
   vertices of the expressive shape, reproject, and recompute visibility.

Both regressors are linear maps without bias, trained in closed form.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .camera import (LandmarkSet2D, MappingMatrix, fit_mapping, init_landmarks, project,
                     visibility_mask)
from .errors import DimensionError, SingularFitError, SingularGramError
from .features import FeatureConfig, SiftExtractor
from .shape_model import Shape3D, ShapePrior, ShapeState, landmark_subshape

log = logging.getLogger(__name__)

__all__ = [
    "FORMAT_VERSION",
    "LandmarkStage",
    "ShapeStage",
    "CascadeModel",
    "FitResult",
    "TrainingSample",
    "train_landmark_stage",
    "train_shape_stage",
    "train_cascade",
    "fit",
    "auto_ridge",
]

FORMAT_VERSION = 1
DEFAULT_STAGES = 5


@dataclass(frozen=True, eq=False)
class LandmarkStage:
    """Linear landmark regressor, ``2l x dim`` weights."""

    weights: np.ndarray

    def predict(self, features) -> np.ndarray:
        return self.weights @ features


@dataclass(frozen=True, eq=False)
class ShapeStage:
    """Linear shape regressor, ``6n x 2l`` weights; top half updates the identity."""

    weights: np.ndarray

    def predict(self, delta_u):
        out = self.weights @ delta_u
        half = self.weights.shape[0] // 2
        return out[:half], out[half:]


@dataclass(frozen=True, eq=False)
class CascadeModel:
    stages: tuple
    prior: ShapePrior
    feature_config: FeatureConfig = FeatureConfig()
    ridge: float | None = None
    ridge_factor: float = 1e-3
    stage_lambdas: tuple = ()
    history: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        stages = tuple(self.stages)
        if not stages:
            raise ValueError("a cascade needs at least one stage")
        n, l = self.prior.n, self.prior.l
        for k, (lm, sh) in enumerate(stages, 1):
            if lm.weights.shape[0] != 2 * l or not np.all(np.isfinite(lm.weights)):
                raise DimensionError(f"stage {k}: landmark weights have shape {lm.weights.shape}")
            if lm.weights.shape[1] % l:
                raise DimensionError(f"stage {k}: feature dimension not a multiple of l")
            if sh.weights.shape != (6 * n, 2 * l) or not np.all(np.isfinite(sh.weights)):
                raise DimensionError(f"stage {k}: shape weights have shape {sh.weights.shape}")
        object.__setattr__(self, "stages", stages)

    @property
    def K(self) -> int:
        return len(self.stages)

    @property
    def feature_dim(self) -> int:
        return self.stages[0][0].weights.shape[1]


@dataclass(frozen=True, eq=False)
class FitResult:
    landmarks: LandmarkSet2D
    pen_shape: Shape3D
    expressive_shape: Shape3D
    mapping: MappingMatrix | None
    degraded: bool = False
    per_iteration_trace: list | None = None

    @property
    def expression_offset(self) -> np.ndarray:
        return self.expressive_shape.vertices - self.pen_shape.vertices


@dataclass(frozen=True, eq=False)
class TrainingSample:
    """One training triplet.

    ``target.identity`` is the PEN shape, ``target.expression_offset`` the
    expression deformation; ``landmarks`` holds every landmark at its
    anatomically correct position with the annotated visibility.
    """

    image: object
    bbox: tuple
    target: ShapeState
    landmarks: LandmarkSet2D
    sample_id: str = ""
    yaw: float = 0.0


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("regression inputs must be finite")


def auto_ridge(x: np.ndarray, factor: float = 1e-3) -> float:
    """``factor * trace(X X^T) / rows(X)``: the default ridge for a design matrix."""
    rows = x.shape[0]
    return float(factor * np.einsum("ij,ij->", x, x) / max(rows, 1))


def train_landmark_stage(features, target_deltas, lam: float = 0.0) -> LandmarkStage:
    """Ridge least squares ``argmin sum |dU*_i - W h_i|^2 + lam |W|_F^2``.

    ``features`` is ``dim x N``, ``target_deltas`` is ``2l x N``.  With
    ``lam = 0`` the minimum-norm least-squares solution is returned, which
    is the unique minimiser when the feature Gram matrix is invertible.
    """
    h = np.asarray(features, dtype=np.float64)
    t = np.asarray(target_deltas, dtype=np.float64)
    if h.ndim != 2 or t.ndim != 2 or h.shape[1] != t.shape[1]:
        raise DimensionError(f"features {h.shape} and targets {t.shape} disagree on N")
    if h.shape[1] < 1:
        raise ValueError("need at least one sample")
    if lam < 0:
        raise ValueError("ridge must be non-negative")
    _check_finite(h, t)
    dim, n = h.shape
    if lam == 0.0:
        w = np.linalg.lstsq(h.T, t.T, rcond=None)[0].T
    elif n < dim:
        # dual form: T (H^T H + lam I)^-1 H^T, same minimiser
        g = h.T @ h
        g[np.diag_indices_from(g)] += lam
        w = scipy.linalg.solve(g, t.T, assume_a="pos").T @ h.T
    else:
        g = h @ h.T
        g[np.diag_indices_from(g)] += lam
        w = scipy.linalg.solve(g, h @ t.T, assume_a="pos").T
    return LandmarkStage(np.ascontiguousarray(w))


def train_shape_stage(delta_u, delta_s, lam: float = 0.0, stage: int | None = None) -> ShapeStage:
    """``R_S = dS dU^T (dU dU^T + lam I)^-1``; ``lam = 0`` is the plain closed form.

    ``delta_u`` is ``2l x N`` and ``delta_s`` is ``6n x N``.
    """
    du = np.asarray(delta_u, dtype=np.float64)
    ds = np.asarray(delta_s, dtype=np.float64)
    if du.ndim != 2 or ds.ndim != 2 or du.shape[1] != ds.shape[1]:
        raise DimensionError(f"landmark deltas {du.shape} and shape deltas {ds.shape} disagree on N")
    if lam < 0:
        raise ValueError("ridge must be non-negative")
    _check_finite(du, ds)
    rows, n = du.shape
    gram = du @ du.T
    if lam == 0.0:
        if n <= rows:
            raise SingularGramError(
                f"landmark Gram is singular: N = {n} samples but 2l = {rows}; need N > 2l", stage)
        rank = np.linalg.matrix_rank(du)
        if rank < rows:
            raise SingularGramError(f"landmark Gram is singular: rank {rank} < 2l = {rows}", stage)
    else:
        gram[np.diag_indices_from(gram)] += lam
    try:
        w = scipy.linalg.solve(gram, du @ ds.T, assume_a="pos").T
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SingularGramError(f"landmark Gram is not invertible ({exc})", stage) from exc
    return ShapeStage(np.ascontiguousarray(w))


def _resolve_extractor(extractor, feature_config):
    return extractor if extractor is not None else SiftExtractor(feature_config)


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _refine(u_hat, expressive, prior, prev_m):
    """Refinement step; returns (U, visible, M, degraded)."""
    s_l = landmark_subshape(expressive, prior)
    try:
        m = fit_mapping(u_hat.reshape(-1, 2), s_l)
    except SingularFitError:
        if prev_m is None:
            return u_hat.copy(), None, None, True
        m, degraded = prev_m, True
    else:
        degraded = False
    u = project(m, s_l).reshape(-1)
    vis = visibility_mask(m, expressive, prior)
    return u, vis, m, degraded


def _nme_rows(est, gt, gt_vis, bboxes):
    err = np.linalg.norm((est - gt).reshape(est.shape[0], -1, 2), axis=2)
    d = np.sqrt(bboxes[:, 2] * bboxes[:, 3])
    cnt = gt_vis.sum(axis=1)
    ok = cnt > 0
    vals = (err * gt_vis).sum(axis=1)[ok] / cnt[ok] / d[ok]
    return float(vals.mean()) if vals.size else float("nan")


def _mae_rows(est, gt):
    return float(np.linalg.norm((est - gt).reshape(est.shape[0], -1, 3), axis=2).mean())


def train_cascade(dataset: Sequence[TrainingSample], prior: ShapePrior, K: int = DEFAULT_STAGES,
                  ridge: float | None = None, ridge_factor: float = 1e-3,
                  feature_config: FeatureConfig = FeatureConfig(), extractor=None,
                  workers: int = 1, converge_tol: float = 1e-9,
                  progress: Callable[[int, dict], None] | None = None) -> CascadeModel:
    """Learn K coupled (landmark, shape) regressor pairs.

    ``ridge=None`` picks ``ridge_factor * trace(Gram) / dim`` per regressor;
    a number fixes lambda for both regressors of every stage (0 gives the
    unregularised closed forms).  Once every training landmark matches its
    target to within ``converge_tol`` times the mean box side, remaining
    stages are stored as zero (pass-through) stages because there is no
    residual left to regress.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    samples = list(dataset)
    if not samples:
        raise ValueError("empty training set")
    n, l = prior.n, prior.l
    for s in samples:
        if s.landmarks.l != l:
            raise DimensionError(f"sample {s.sample_id!r} has {s.landmarks.l} landmarks, prior has {l}")
        if s.target.n != n:
            raise DimensionError(f"sample {s.sample_id!r} has {s.target.n} vertices, prior has {n}")
    extractor = _resolve_extractor(extractor, feature_config)
    N = len(samples)
    bboxes = np.array([s.bbox for s in samples], dtype=np.float64)
    u_star = np.stack([s.landmarks.as_vector() for s in samples])
    vis_star = np.stack([s.landmarks.visible for s in samples])
    id_star = np.stack([s.target.identity for s in samples])
    off_star = np.stack([s.target.expression_offset for s in samples])
    expr_star = id_star + off_star

    u = np.stack([init_landmarks(prior, s.bbox).as_vector() for s in samples])
    vis = np.ones((N, l), dtype=bool)
    ident = np.tile(prior.mean_pen_shape, (N, 1))
    off = np.zeros((N, 3 * n))
    maps: list = [None] * N
    tol = converge_tol * float(np.mean(np.sqrt(bboxes[:, 2] * bboxes[:, 3])))

    history = {"nme": [_nme_rows(u, u_star, vis_star, bboxes)],
               "mae": [_mae_rows(ident + off, expr_star)],
               "mae_pen": [_mae_rows(ident, id_star)],
               "passthrough": []}
    stages = []
    lambdas = []
    for k in range(1, K + 1):
        residual = u_star - u
        if np.max(np.abs(residual)) <= tol:
            log.info("stage %d: landmark residual below tolerance, pass-through stage", k)
            dim = stages[-1][0].weights.shape[1] if stages else extractor.dim_per_landmark * l
            stages.append((LandmarkStage(np.zeros((2 * l, dim))), ShapeStage(np.zeros((6 * n, 2 * l)))))
            lambdas.append((0.0, 0.0))
            history["passthrough"].append(k)
            for key in ("nme", "mae", "mae_pen"):
                history[key].append(history[key][-1])
            continue

        def feat(i):
            return np.asarray(extractor(samples[i].image, LandmarkSet2D(u[i], vis[i]),
                                        samples[i].bbox), dtype=np.float64)

        h = np.stack(_map(feat, range(N), workers), axis=1)
        lam_u = auto_ridge(h, ridge_factor) if ridge is None else float(ridge)
        r_u = train_landmark_stage(h, residual.T, lam_u)
        du = r_u.predict(h)
        u_hat = u + du.T

        ds = np.concatenate([(id_star - ident).T, (off_star - off).T])
        lam_s = auto_ridge(du, ridge_factor) if ridge is None else float(ridge)
        r_s = train_shape_stage(du, ds, lam_s, stage=k)
        d_id, d_off = r_s.predict(du)
        ident = ident + d_id.T
        off = off + d_off.T

        expressive = ident + off
        for i in range(N):
            ui, vi, mi, _ = _refine(u_hat[i], expressive[i], prior, maps[i])
            u[i] = ui
            if vi is not None:
                vis[i] = vi
            maps[i] = mi
        stages.append((r_u, r_s))
        lambdas.append((lam_u, lam_s))
        history["nme"].append(_nme_rows(u, u_star, vis_star, bboxes))
        history["mae"].append(_mae_rows(expressive, expr_star))
        history["mae_pen"].append(_mae_rows(ident, id_star))
        log.info("stage %d: NME %.6g, MAE %.6g mm", k, history["nme"][-1], history["mae"][-1])
        if progress is not None:
            progress(k, {key: v[-1] for key, v in history.items() if key != "passthrough"})

    return CascadeModel(tuple(stages), prior, feature_config, ridge, ridge_factor,
                        tuple(lambdas), history)


def fit(image, bbox, model: CascadeModel, extractor=None, trace: bool = False) -> FitResult:
    """Run the K frozen stages on one image and face box."""
    prior = model.prior
    extractor = _resolve_extractor(extractor, model.feature_config)
    u = init_landmarks(prior, bbox).as_vector()
    vis = np.ones(prior.l, dtype=bool)
    ident = prior.mean_pen_shape.copy()
    off = np.zeros_like(ident)
    m = None
    degraded = False
    steps = [] if trace else None
    for r_u, r_s in model.stages:
        h = np.asarray(extractor(image, LandmarkSet2D(u, vis), bbox), dtype=np.float64)
        du = r_u.predict(h)
        u_hat = u + du
        d_id, d_off = r_s.predict(du)
        ident = ident + d_id
        off = off + d_off
        u, new_vis, m, bad = _refine(u_hat, ident + off, prior, m)
        degraded = degraded or bad
        if new_vis is not None:
            vis = new_vis
        if trace:
            steps.append({"landmarks": u.copy(), "visible": vis.copy(),
                          "identity_norm": float(np.linalg.norm(ident - prior.mean_pen_shape)),
                          "expression_norm": float(np.linalg.norm(off))})
    return FitResult(LandmarkSet2D(u, vis), Shape3D(ident, prior.faces),
                     Shape3D(ident + off, prior.faces), m, degraded, steps)
