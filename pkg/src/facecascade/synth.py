"""Synthetic data: registered face meshes, pose sweeps with shaded renders, and a linear test world.

Face meshes are height fields over an elliptical domain (x right, y down,
z towards the viewer, millimetres), triangulated once so every subject
shares the same topology.  Renders are Lambert-shaded depth images with
a procedural albedo; they exist to give the gradient features something
to work with and make no claim to realism.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from . import _kernels
from .camera import LandmarkSet2D, MappingMatrix, project, visibility_mask, weak_perspective, yaw_rotation
from .cascade import TrainingSample
from .errors import DimensionError
from .features import GrayImage
from .shape_model import Shape3D, ShapePrior, ShapeState, landmark_subshape, vertex_normals

__all__ = [
    "SynthConfig",
    "SynthFace",
    "SweepSample",
    "LinearWorld",
    "canonical_landmarks",
    "face_template",
    "synth_faces",
    "render",
    "synth_pose_sweep",
    "synth_linear_world",
]

# half extents of the face domain, mm
HALF_WIDTH = 75.0
HALF_HEIGHT = 100.0


def _ellipse(n, cx, cy, rx, ry, start=0.0):
    t = start + 2 * np.pi * np.arange(n) / n
    return np.column_stack([cx + rx * np.cos(t), cy + ry * np.sin(t)])


def _canonical68() -> np.ndarray:
    """A 68-point layout (jaw, brows, nose, eyes, mouth) in mm, y down."""
    t = np.linspace(np.pi, 0.0, 17)
    jaw = np.column_stack([63.0 * np.cos(t), -8.0 + 84.0 * np.sin(t)])
    bx = np.linspace(-52.0, -12.0, 5)
    brow_l = np.column_stack([bx, -42.0 - 6.0 * np.sin(np.linspace(0, np.pi, 5))])
    brow_r = np.column_stack([-bx[::-1], brow_l[::-1, 1]])
    bridge = np.column_stack([np.zeros(4), np.linspace(-28.0, 4.0, 4)])
    nostrils = np.column_stack([np.linspace(-14.0, 14.0, 5), 14.0 + 3.0 * np.cos(np.linspace(-1.2, 1.2, 5))])
    eye_l = _ellipse(6, -30.0, -22.0, 12.0, 5.0, np.pi)
    eye_r = _ellipse(6, 30.0, -22.0, 12.0, 5.0, np.pi)
    eye_r[:, 0] = 60.0 - eye_r[:, 0]  # mirror ordering of the left eye
    mouth_o = _ellipse(12, 0.0, 42.0, 24.0, 10.0, np.pi)
    mouth_i = _ellipse(8, 0.0, 42.0, 15.0, 4.0, np.pi)
    return np.vstack([jaw, brow_l, brow_r, bridge, nostrils, eye_l, eye_r, mouth_o, mouth_i])


def canonical_landmarks(l: int = 68) -> np.ndarray:
    """``l`` landmark positions (x, y) on the face domain.

    The 68-point layout is subsampled evenly for smaller ``l``; larger ``l``
    adds interior points on a sunflower pattern.
    """
    if l < 1:
        raise ValueError("need at least one landmark")
    base = _canonical68()
    if l <= 68:
        return base[np.round(np.linspace(0, 67, l)).astype(int)]
    extra = _sunflower(l - 68, 0.55 * HALF_WIDTH, 0.55 * HALF_HEIGHT, offset=0.5)
    return np.vstack([base, extra])


def _sunflower(count, rx, ry, offset=0.5):
    k = np.arange(count) + offset
    r = np.sqrt(k / count)
    theta = k * np.pi * (3.0 - np.sqrt(5.0))
    return np.column_stack([rx * r * np.cos(theta), ry * r * np.sin(theta)])


def _base_height(xy: np.ndarray) -> np.ndarray:
    x, y = xy[:, 0], xy[:, 1]
    z = 55.0 * np.exp(-(x ** 2 / (2 * 48.0 ** 2) + y ** 2 / (2 * 70.0 ** 2)))
    z += 22.0 * np.exp(-(x ** 2 / (2 * 9.0 ** 2) + (y - 2.0) ** 2 / (2 * 16.0 ** 2)))
    for sx in (-30.0, 30.0):
        z -= 7.0 * np.exp(-((x - sx) ** 2 + (y + 22.0) ** 2) / (2 * 10.0 ** 2))
    z += 4.0 * np.exp(-(x ** 2 / (2 * 30.0 ** 2) + (y + 42.0) ** 2 / (2 * 6.0 ** 2)))
    return z


def face_template(n: int, l: int = 68):
    """Neutral mean face: (vertices n x 3, faces, landmark vertex indices).

    Landmark vertices are snapped onto the canonical positions before
    triangulation so that every landmark lies exactly on the mesh.
    """
    if n < max(l + 8, 16):
        raise ValueError(f"n = {n} is too small for {l} landmarks")
    lm = canonical_landmarks(l)
    xy = _sunflower(n, HALF_WIDTH, HALF_HEIGHT)
    tree = cKDTree(xy)
    taken = np.zeros(n, dtype=bool)
    idx = np.empty(l, dtype=np.int64)
    for j, p in enumerate(lm):
        k = min(n, 32)
        while True:
            _, cand = tree.query(p, k=k)
            free = [c for c in np.atleast_1d(cand) if not taken[c]]
            if free or k == n:
                break
            k = min(n, 2 * k)
        idx[j] = free[0]
        taken[free[0]] = True
    xy[idx] = lm
    tri = Delaunay(xy).simplices.astype(np.int64)
    a, b, c = xy[tri[:, 0]], xy[tri[:, 1]], xy[tri[:, 2]]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    tri[cross < 0] = tri[cross < 0][:, [0, 2, 1]]
    verts = np.column_stack([xy, _base_height(xy)])
    return verts, tri, idx


def _identity_field(xy, rng):
    """Random smooth identity deformation of the template."""
    sx, sy, sz = 1.0 + rng.normal(0, [0.05, 0.04, 0.08])
    out = np.column_stack([xy[:, 0] * sx, xy[:, 1] * sy, _base_height(xy) * sz])
    centres = _sunflower(6, 0.8 * HALF_WIDTH, 0.8 * HALF_HEIGHT) + rng.normal(0, 8.0, (6, 2))
    amps = rng.normal(0, 3.0, 6)
    widths = rng.uniform(15.0, 30.0, 6)
    for c, a, w in zip(centres, amps, widths):
        out[:, 2] += a * np.exp(-((xy - c) ** 2).sum(axis=1) / (2 * w ** 2))
    out[:, 2] += rng.normal(0, 3.0) * np.exp(-(xy[:, 0] ** 2 / (2 * 9.0 ** 2) + (xy[:, 1] - 2.0) ** 2 / (2 * 16.0 ** 2)))
    return out


def _expression_fields(v: np.ndarray) -> np.ndarray:
    """Unit expression displacement fields (smile, open mouth, raised brows); 3 x n x 3."""
    x, y = v[:, 0], v[:, 1]
    mouth = np.exp(-(x ** 2 / (2 * 30.0 ** 2) + (y - 42.0) ** 2 / (2 * 14.0 ** 2)))
    smile = np.column_stack([0.15 * x * mouth, -0.12 * np.abs(x) * mouth, 2.0 * mouth])
    jaw = 1.0 / (1.0 + np.exp(-(y - 44.0) / 4.0)) * np.exp(-x ** 2 / (2 * 40.0 ** 2))
    open_ = np.column_stack([np.zeros_like(x), 9.0 * jaw, -3.0 * jaw])
    brow = np.exp(-((y + 42.0) ** 2) / (2 * 10.0 ** 2)) * np.exp(-x ** 2 / (2 * 50.0 ** 2))
    raise_ = np.column_stack([np.zeros_like(x), -5.0 * brow, 1.0 * brow])
    return np.stack([smile, open_, raise_])


@dataclass(frozen=True, eq=False)
class SynthFace:
    """One subject in one expression: PEN and expressive shapes."""

    subject: str
    pen: Shape3D
    expressive: Shape3D
    expression: str = "neutral"

    @property
    def state(self) -> ShapeState:
        return ShapeState(self.pen.as_vector(), self.expressive.as_vector() - self.pen.as_vector())


def synth_faces(num_subjects: int, n: int = 2000, l: int = 68, expressions_per_subject: int = 1,
                seed: int = 0, include_neutral: bool = True):
    """Random identities with random expressions, plus the prior built from them.

    Returns ``(prior, faces)``.  The prior's mean shape is the mean of the
    PEN shapes and its landmark template is their mean frontal landmark
    layout.
    """
    if num_subjects < 1:
        raise ValueError("need at least one subject")
    base, tri, idx = face_template(n, l)
    root = np.random.SeedSequence(seed)
    pens = []
    faces = []
    for s, child in enumerate(root.spawn(num_subjects)):
        rng = np.random.default_rng(child)
        pen = _identity_field(base[:, :2], rng)
        pens.append(pen)
        sid = f"s{s:03d}"
        if include_neutral:
            faces.append(SynthFace(sid, Shape3D(pen, tri), Shape3D(pen, tri), "neutral"))
        fields = _expression_fields(pen)
        for e in range(expressions_per_subject):
            coef = rng.uniform(0.0, 1.0, 3) * (rng.uniform(size=3) < 0.7)
            if not coef.any():
                coef[rng.integers(3)] = 1.0
            expr = pen + np.tensordot(coef, fields, axes=1)
            faces.append(SynthFace(sid, Shape3D(pen, tri), Shape3D(expr, tri), f"e{e}"))
    mean = np.mean(pens, axis=0)
    tmpl = np.mean([p[idx, :2] for p in pens], axis=0)
    prior = ShapePrior(mean.reshape(-1), tmpl.reshape(-1), idx, faces=tri)
    return prior, faces


# ------------------------------------------------------------------ rendering

def _albedo(pen_xy: np.ndarray, landmark_xy: np.ndarray) -> np.ndarray:
    x, y = pen_xy[:, 0], pen_xy[:, 1]
    a = 0.78 + 0.12 * np.cos(x / 5.0) * np.cos(y / 7.0)
    d, _ = cKDTree(landmark_xy).query(pen_xy)
    return a * (1.0 - 0.45 * np.exp(-d ** 2 / (2 * 3.0 ** 2)))


def render(shape: Shape3D, prior: ShapePrior, rotation, mapping, width: int, height: int,
           albedo: np.ndarray | None = None) -> GrayImage:
    """Lambert-shaded depth render under a weak-perspective camera, 8-bit quantised."""
    v = shape.vertices
    normals = vertex_normals(shape, prior)
    r = np.asarray(rotation, dtype=np.float64)
    view = r[2]  # model-frame direction towards the camera
    light = view + 0.35 * r[0] - 0.45 * r[1]
    light /= np.linalg.norm(light)
    shade = 0.12 + 0.88 * np.clip(normals @ light, 0.0, 1.0)
    if albedo is not None:
        shade = shade * albedo
    xy = project(mapping, v.T)
    depth = v @ view
    img, _ = _kernels.rasterize(xy, depth, shade, prior.faces, width, height, 0.0)
    return GrayImage(np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0)


@dataclass(frozen=True)
class SynthConfig:
    yaws: tuple = tuple(float(a) for a in range(-90, 91, 10))
    width: int = 128
    height: int = 128
    landmark_noise: float = 0.0  # px, added to the recorded landmarks
    shape_noise: float = 0.0  # mm, added to the rendered geometry only
    scale_fraction: float = 0.7  # projected face height over image side
    seed: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8 x 8")
        if self.landmark_noise < 0 or self.shape_noise < 0:
            raise ValueError("noise levels must be non-negative")
        object.__setattr__(self, "yaws", tuple(float(a) for a in self.yaws))


@dataclass(frozen=True, eq=False)
class SweepSample(TrainingSample):
    """A training sample that also remembers its subject and camera."""

    subject: str = ""
    expression: str = ""
    mapping: MappingMatrix | None = None
    scale: float = 1.0


def _bbox_of(points: np.ndarray) -> tuple:
    lo, hi = points.min(axis=0), points.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))


def _sweep_one(face: SynthFace, prior: ShapePrior, cfg: SynthConfig, yaw: float, seed_seq) -> SweepSample:
    rng = np.random.default_rng(seed_seq)
    r = yaw_rotation(yaw)
    scale = cfg.scale_fraction * min(cfg.width, cfg.height) / (2.0 * HALF_HEIGHT)
    mapping = weak_perspective(r, scale, (cfg.width / 2.0, cfg.height / 2.0))
    expr = face.expressive
    s_l = landmark_subshape(expr, prior)
    pts = project(mapping, s_l)
    vis = visibility_mask(mapping, expr, prior)
    geom = expr
    if cfg.shape_noise > 0:
        geom = expr.with_vertices(expr.vertices + rng.normal(0.0, cfg.shape_noise, expr.vertices.shape))
    albedo = _albedo(face.pen.vertices[:, :2], face.pen.vertices[prior.landmark_indices, :2])
    image = render(geom, prior, r, mapping, cfg.width, cfg.height, albedo)
    noisy = pts + (rng.normal(0.0, cfg.landmark_noise, pts.shape) if cfg.landmark_noise > 0 else 0.0)
    bbox = _bbox_of(pts)
    sid = f"{face.subject}_{face.expression}_y{int(round(yaw)):+03d}"
    return SweepSample(image, bbox, face.state, LandmarkSet2D(noisy, vis), sid, float(yaw),
                       face.subject, face.expression, mapping, scale)


def synth_pose_sweep(faces, prior: ShapePrior, cfg: SynthConfig = SynthConfig(),
                     workers: int = 1) -> list:
    """Render every face at every yaw of ``cfg``.

    Each (face, yaw) pair draws its noise from its own seed stream, so the
    output does not depend on ``workers``.  The box is the tight bounding
    box of the noiseless projected landmarks.
    """
    faces = list(faces)
    for f in faces:
        if f.pen.n != prior.n:
            raise DimensionError(f"face {f.subject} has {f.pen.n} vertices, prior has {prior.n}")
    jobs = []
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(faces) * len(cfg.yaws))
    for i, f in enumerate(faces):
        for j, yaw in enumerate(cfg.yaws):
            jobs.append((f, yaw, seeds[i * len(cfg.yaws) + j]))

    def one(job):
        return _sweep_one(job[0], prior, cfg, job[1], job[2])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, jobs))
    return [one(j) for j in jobs]


# ------------------------------------------------------------------ linear world

@dataclass(frozen=True, eq=False)
class LinearImage:
    """Stand-in image for the linear world: the target landmarks and a nuisance code."""

    target: np.ndarray
    nuisance: np.ndarray


class LinearFeatures:
    """Features ``E (U* - U) + F z``: an exactly invertible encoding of the landmark residual."""

    def __init__(self, encode: np.ndarray, nuisance: np.ndarray, l: int):
        self.encode = encode
        self.nuisance = nuisance
        self.dim_per_landmark = encode.shape[0] // l

    def __call__(self, image: LinearImage, landmarks: LandmarkSet2D, bbox=None) -> np.ndarray:
        return self.encode @ (image.target - landmarks.as_vector()) + self.nuisance @ image.nuisance


@dataclass(frozen=True, eq=False)
class LinearWorld:
    prior: ShapePrior
    samples: list
    extractor: LinearFeatures
    landmark_map: np.ndarray  # W*: 2l x dim
    shape_map: np.ndarray  # G*: 6n x 2l
    mapping: MappingMatrix
    bbox: tuple
    extra: dict = field(default_factory=dict)


def synth_linear_world(n: int = 60, l: int = 12, N: int | None = None, seed: int = 0,
                       descriptor_dim: int = 128, shape_scale: float = 2.0) -> LinearWorld:
    """A dataset on which the cascade's closed-form regressors are exact.

    Every sample shares one camera and one box, so every cascade starts
    from the same landmarks ``U0 = M S_L``.  Targets are ``S* = S0 + B p``
    with ``p`` in R^{2l}; the landmark residual is ``A p`` with ``A`` the
    projected landmark block of ``B``, so the shape map is ``G* = B A^-1``.
    Features encode the residual through the first 2l columns of a random
    orthogonal matrix and add nuisance in the orthogonal complement, so
    the landmark map is ``W* = E^+``.
    """
    dim = descriptor_dim * l
    if N is None:
        N = 4 * max(dim, 2 * l)
    rng = np.random.default_rng(seed)
    base, tri, idx = face_template(n, l)
    mean = base.reshape(-1)
    mapping = weak_perspective(yaw_rotation(15.0), 1.0, (100.0, 120.0))
    s_l = base[idx].T
    tmpl = project(mapping, s_l)
    prior = ShapePrior(mean, tmpl.reshape(-1), idx, faces=tri)
    bbox = _bbox_of(tmpl)

    b = rng.normal(0.0, shape_scale, (6 * n, 2 * l))
    rows = (3 * idx[:, None] + np.arange(3)).reshape(-1)
    b_expr_l = (b[:3 * n] + b[3 * n:])[rows]  # 3l x 2l, landmark order x,y,z
    lin = np.asarray(mapping)[:, :3]
    a = np.einsum("ij,ljk->lik", lin, b_expr_l.reshape(l, 3, 2 * l)).reshape(2 * l, 2 * l)
    g = b @ np.linalg.inv(a)

    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    encode = q[:, :2 * l] * 0.5
    nuisance = q[:, 2 * l:]
    w = np.linalg.pinv(encode)

    p = rng.normal(0.0, 1.0, (N, 2 * l))
    z = rng.normal(0.0, 0.5, (N, dim - 2 * l))
    samples = []
    for i in range(N):
        delta = b @ p[i]
        state = ShapeState(mean + delta[:3 * n], delta[3 * n:])
        u_star = project(mapping, landmark_subshape(state.expressive, prior))
        lms = LandmarkSet2D(u_star, np.ones(l, dtype=bool))
        samples.append(TrainingSample(LinearImage(lms.as_vector(), z[i]), bbox, state, lms, f"lin{i:05d}"))
    return LinearWorld(prior, samples, LinearFeatures(encode, nuisance, l), w, g, mapping, bbox)
