"""3D shape matching, score fusion, identification and verification metrics."""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .camera import procrustes_align, rigid_icp
from .errors import DimensionError, FormatError

__all__ = [
    "ScoreMatrix",
    "VerificationReport",
    "shape_distance",
    "distance_matrix",
    "distances_to_similarity",
    "fuse_scores",
    "rank1_identify",
    "verify_metrics",
    "roc_curve",
    "read_score_csv",
    "write_score_csv",
    "read_pairs_csv",
]


@dataclass(frozen=True, eq=False)
class ScoreMatrix:
    """Probe x gallery scores with row and column labels."""

    scores: np.ndarray
    probe_labels: tuple
    gallery_labels: tuple

    def __post_init__(self):
        s = np.array(self.scores, dtype=np.float64, copy=True)
        if s.ndim != 2:
            raise DimensionError("score matrix must be 2-D")
        probes = tuple(str(x) for x in self.probe_labels)
        gallery = tuple(str(x) for x in self.gallery_labels)
        if s.shape != (len(probes), len(gallery)):
            raise DimensionError(f"scores {s.shape} vs {len(probes)} probe and "
                                 f"{len(gallery)} gallery labels")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "probe_labels", probes)
        object.__setattr__(self, "gallery_labels", gallery)

    def with_scores(self, scores) -> "ScoreMatrix":
        return ScoreMatrix(scores, self.probe_labels, self.gallery_labels)


@dataclass(frozen=True)
class VerificationReport:
    """Percentages; ``threshold`` is where ``accuracy`` is attained (accept if score >= threshold)."""

    accuracy: float
    eer: float
    auc: float
    threshold: float
    eer_threshold: float


def shape_distance(probe, gallery, mode: str = "corresponded", **icp_params) -> float:
    """Mean per-vertex distance after rigid alignment of ``probe`` onto ``gallery``."""
    if mode == "corresponded":
        return procrustes_align(probe, gallery, with_scale=False)[2]
    if mode == "icp":
        return rigid_icp(probe, gallery, **icp_params).distance
    raise ValueError(f"unknown matching mode {mode!r}")


def distance_matrix(probes: Sequence, gallery: Sequence, mode: str = "corresponded",
                    workers: int = 1, **icp_params) -> np.ndarray:
    """All probe-gallery shape distances; rows follow ``probes``."""
    pairs = [(i, j) for i in range(len(probes)) for j in range(len(gallery))]

    def one(ij):
        return shape_distance(probes[ij[0]], gallery[ij[1]], mode, **icp_params)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            vals = list(ex.map(one, pairs))
    else:
        vals = [one(p) for p in pairs]
    return np.array(vals, dtype=np.float64).reshape(len(probes), len(gallery))


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def distances_to_similarity(distances, per_row: bool = False):
    """``max(D) - D`` followed by min-max normalisation to [0, 1].

    Normalisation is over the whole matrix unless ``per_row``.  A constant
    range maps to zeros.  Accepts a :class:`ScoreMatrix` or an array and
    returns the same kind.
    """
    is_sm = isinstance(distances, ScoreMatrix)
    d = np.asarray(distances.scores if is_sm else distances, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty distance matrix")
    if per_row:
        d2 = np.atleast_2d(d)
        s = np.stack([_minmax(row.max() - row) for row in d2]).reshape(d.shape)
    else:
        s = _minmax(d.max() - d)
    return distances.with_scores(s) if is_sm else s


def fuse_scores(s2d: ScoreMatrix, s3d: ScoreMatrix, w: float) -> ScoreMatrix:
    """Weighted sum rule ``w * s2d + (1 - w) * s3d``."""
    if not 0.0 <= w <= 1.0:
        raise ValueError("fusion weight must lie in [0, 1]")
    if s2d.probe_labels != s3d.probe_labels or s2d.gallery_labels != s3d.gallery_labels:
        raise DimensionError("score matrices have different labels or label order")
    return s2d.with_scores(w * s2d.scores + (1.0 - w) * s3d.scores)


def rank1_identify(scores: ScoreMatrix, true_labels: Sequence | None = None):
    """Highest-scoring gallery label per probe, and the rank-1 accuracy in percent.

    Ties go to the lowest gallery index.  ``true_labels`` defaults to the
    probe labels.
    """
    s = scores.scores
    if s.shape[1] < 1:
        raise ValueError("gallery is empty")
    best = np.argmax(s, axis=1)
    pred = [scores.gallery_labels[j] for j in best]
    truth = list(scores.probe_labels if true_labels is None else (str(t) for t in true_labels))
    acc = 100.0 * float(np.mean([p == t for p, t in zip(pred, truth)])) if pred else 0.0
    return pred, acc


def roc_curve(genuine, imposter):
    """(thresholds, FAR, FRR) over all distinct scores, accepting ``score >= t``.

    A final threshold above every score closes the curve at FAR = 0.
    """
    g = np.sort(np.asarray(genuine, dtype=np.float64))
    i = np.sort(np.asarray(imposter, dtype=np.float64))
    thr = np.unique(np.concatenate([g, i]))
    thr = np.append(thr, np.inf)
    far = 1.0 - np.searchsorted(i, thr, side="left") / i.size
    frr = np.searchsorted(g, thr, side="left") / g.size
    return thr, far, frr


def verify_metrics(genuine, imposter) -> VerificationReport:
    """Accuracy (best threshold), EER and AUC of a verification experiment, in percent."""
    g = np.asarray(genuine, dtype=np.float64).reshape(-1)
    i = np.asarray(imposter, dtype=np.float64).reshape(-1)
    if g.size == 0 or i.size == 0:
        raise ValueError("need at least one genuine and one imposter score")
    thr, far, frr = roc_curve(g, i)

    # points run from (FAR, TAR) = (1, 1) at the lowest score to (0, 0) at +inf
    tar = 1.0 - frr
    auc = float(np.sum((far[:-1] - far[1:]) * (tar[:-1] + tar[1:]) / 2.0))

    # EER: FAR - FRR decreases from >= 0 to <= 0 along thr
    diff = far - frr
    k = int(np.argmax(diff <= 0.0))
    if diff[k] == 0.0 or k == 0:
        eer = (far[k] + frr[k]) / 2.0
        eer_thr = float(thr[k])
    else:
        a, b = diff[k - 1], diff[k]
        t = a / (a - b)
        eer = far[k - 1] + t * (far[k] - far[k - 1])
        eer_thr = float(thr[k - 1]) if not np.isfinite(thr[k]) else float(
            thr[k - 1] + t * (thr[k] - thr[k - 1]))

    correct = g.size * tar + i.size * (1.0 - far)
    best = int(np.argmax(correct))
    acc = float(correct[best] / (g.size + i.size))
    if best == 0:
        threshold = float(thr[0])
    elif np.isfinite(thr[best]):
        threshold = float((thr[best - 1] + thr[best]) / 2.0)
    else:
        threshold = float(np.nextafter(thr[best - 1], np.inf))
    return VerificationReport(100.0 * acc, 100.0 * float(eer), 100.0 * auc, threshold, eer_thr)


def write_score_csv(scores: ScoreMatrix, path) -> None:
    """Header row of gallery labels; first column probe labels.  ``path`` may be a text stream."""
    if hasattr(path, "write"):
        _write_scores(scores, path)
        return
    with open(path, "w", newline="") as fh:
        _write_scores(scores, fh)


def _write_scores(scores: ScoreMatrix, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["probe", *scores.gallery_labels])
    for lab, row in zip(scores.probe_labels, scores.scores):
        w.writerow([lab, *(repr(float(x)) for x in row)])


def read_score_csv(path) -> ScoreMatrix:
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise FormatError(str(exc), path) from exc
    if not rows:
        raise FormatError("empty score file", path)
    gallery = rows[0][1:]
    probes, vals = [], []
    for ln, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != len(gallery) + 1:
            raise FormatError(f"expected {len(gallery) + 1} cells, got {len(row)}", path, ln)
        try:
            vals.append([float(x) for x in row[1:]])
        except ValueError as exc:
            raise FormatError(f"non-numeric score ({exc})", path, ln) from exc
        probes.append(row[0])
    return ScoreMatrix(np.array(vals, dtype=np.float64).reshape(len(probes), len(gallery)),
                       probes, gallery)


def read_pairs_csv(path) -> list:
    """Verification pairs ``path_a, path_b, same`` (same is 0/1 or true/false)."""
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        for ln, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if ln == 1 and row[-1].strip().lower() in ("same", "same_flag", "label"):
                continue
            if len(row) != 3:
                raise FormatError(f"expected 3 fields, got {len(row)}", path, ln)
            flag = row[2].strip().lower()
            if flag not in ("0", "1", "true", "false"):
                raise FormatError(f"bad same-flag {row[2]!r}", path, ln)
            out.append((row[0].strip(), row[1].strip(), flag in ("1", "true")))
    return out
