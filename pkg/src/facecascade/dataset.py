"""On-disk datasets: prior directories, sweep export, manifest loading and k-fold splits."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .camera import LandmarkSet2D
from .errors import DimensionError, FormatError
from .formats import (ManifestSample, read_image, read_indices, read_landmarks, read_mesh,
                      read_manifest, write_indices, write_landmarks, write_manifest, write_obj,
                      write_pgm)
from .shape_model import Shape3D, ShapePrior, ShapeState
from .synth import SweepSample

__all__ = ["save_prior", "load_prior", "write_sweep", "load_samples", "kfold_split"]

PRIOR_MESH = "mean_pen.obj"
PRIOR_INDICES = "landmark_indices.txt"
PRIOR_TEMPLATE = "landmark_template.txt"


def save_prior(prior: ShapePrior, directory) -> Path:
    """Mean PEN mesh (with faces), landmark indices and template in one directory."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    if prior.faces is None:
        raise ValueError("only triangulated priors can be saved as a directory")
    write_obj(prior.mean_shape3d(), d / PRIOR_MESH)
    write_indices(prior.landmark_indices, d / PRIOR_INDICES)
    write_landmarks(LandmarkSet2D(prior.template_points), d / PRIOR_TEMPLATE)
    return d


def load_prior(directory) -> ShapePrior:
    d = Path(directory)
    for name in (PRIOR_MESH, PRIOR_INDICES, PRIOR_TEMPLATE):
        if not (d / name).exists():
            raise FormatError(f"prior directory is missing {name}", d)
    mesh = read_mesh(d / PRIOR_MESH)
    idx = read_indices(d / PRIOR_INDICES)
    tmpl = read_landmarks(d / PRIOR_TEMPLATE, expected_l=idx.size)
    if mesh.faces is None:
        raise FormatError("mean mesh has no faces", d / PRIOR_MESH)
    return ShapePrior(mesh.as_vector(), tmpl.as_vector(), idx, faces=mesh.faces)


def write_sweep(samples, prior: ShapePrior, directory, folds: dict | None = None) -> Path:
    """Write images, landmark files, meshes, the prior and ``manifest.tsv``.

    Meshes are written once per (subject, expression).  Returns the
    manifest path.
    """
    d = Path(directory)
    for sub in ("images", "landmarks", "meshes"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    save_prior(prior, d / "prior")
    rows = []
    written = set()
    for s in samples:
        pen_p = d / "meshes" / f"{s.subject}_pen.obj"
        expr_p = d / "meshes" / f"{s.subject}_{s.expression}_expr.obj"
        if pen_p not in written:
            write_obj(Shape3D(s.target.identity, prior.faces), pen_p)
            written.add(pen_p)
        if expr_p not in written:
            write_obj(Shape3D(s.target.expressive, prior.faces), expr_p)
            written.add(expr_p)
        img_p = d / "images" / f"{s.sample_id}.pgm"
        lm_p = d / "landmarks" / f"{s.sample_id}.txt"
        write_pgm(s.image, img_p)
        write_landmarks(s.landmarks, lm_p)
        fold = -1 if folds is None else folds.get(s.subject, -1)
        rows.append(ManifestSample(img_p, s.bbox, lm_p, pen_p, expr_p, s.yaw, s.subject, fold,
                                   {"scale": repr(float(s.scale))}))
    path = d / "manifest.tsv"
    write_manifest(rows, path)
    return path


def load_samples(manifest, prior: ShapePrior, workers: int = 1) -> list:
    """Read every file a manifest references into training samples.

    Landmark counts and vertex counts are checked against the prior as each
    file is read, so a mismatch stops loading before any training starts.
    """
    rows = read_manifest(manifest) if isinstance(manifest, (str, Path)) else list(manifest)
    for r in rows:
        if r.pen_shape is None or r.expr_shape is None:
            raise FormatError(f"sample {r.image.name} lacks a ground-truth mesh")

    def one(r: ManifestSample):
        lms = read_landmarks(r.landmarks, expected_l=prior.l)
        pen = read_mesh(r.pen_shape, expected_n=prior.n)
        expr = read_mesh(r.expr_shape, expected_n=prior.n)
        state = ShapeState(pen.as_vector(), expr.as_vector() - pen.as_vector())
        scale = float(r.extra.get("scale") or 1.0)
        return SweepSample(read_image(r.image), r.bbox, state, lms, r.image.stem, r.yaw,
                           r.subject, r.expr_shape.stem, None, scale)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, rows))
    return [one(r) for r in rows]


def kfold_split(samples, k: int = 10, seed: int = 0) -> list:
    """Subject-disjoint folds.

    Subjects are shuffled with ``seed`` and dealt round-robin, so fold sizes
    differ by at most one subject.  Returns ``k`` lists of samples; any
    object with a ``subject`` attribute works.
    """
    samples = list(samples)
    if k < 2:
        raise ValueError("k must be at least 2")
    subjects = sorted({s.subject for s in samples})
    if len(subjects) < k:
        raise ValueError(f"{len(subjects)} subjects cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(subjects))
    fold_of = {subjects[j]: pos % k for pos, j in enumerate(order)}
    folds = [[] for _ in range(k)]
    for s in samples:
        folds[fold_of[s.subject]].append(s)
    return folds


def check_consistent(samples, prior: ShapePrior) -> None:
    """Raise if any sample disagrees with the prior on n or l."""
    for s in samples:
        if s.landmarks.l != prior.l:
            raise DimensionError(f"{s.sample_id}: {s.landmarks.l} landmarks, prior has {prior.l}")
        if s.target.n != prior.n:
            raise DimensionError(f"{s.sample_id}: {s.target.n} vertices, prior has {prior.n}")
