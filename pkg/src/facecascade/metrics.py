"""Reconstruction and alignment error metrics, with pose-bucketed reports."""
from __future__ import annotations

import csv
import io
import math
import statistics
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .camera import LandmarkSet2D, procrustes_align
from .errors import DimensionError
from .shape_model import Shape3D

__all__ = [
    "EvalRecord",
    "BucketReport",
    "DEFAULT_BUCKETS",
    "mae",
    "mae_single",
    "npde_map",
    "npde_summary",
    "nme",
    "nme_single",
    "pose_bucket_report",
    "yaw_table",
]

DEFAULT_BUCKETS = ((0.0, 30.0), (30.0, 60.0), (60.0, 90.0))


@dataclass(frozen=True, eq=False)
class EvalRecord:
    sample_id: str
    bbox: tuple
    yaw: float = 0.0
    gt_shape: Shape3D | None = None
    est_shape: Shape3D | None = None
    gt_landmarks: LandmarkSet2D | None = None
    est_landmarks: LandmarkSet2D | None = None

    def __post_init__(self):
        if (self.gt_shape is not None and self.est_shape is not None
                and self.gt_shape.n != self.est_shape.n):
            raise DimensionError(f"{self.sample_id}: gt has {self.gt_shape.n} vertices, "
                                 f"estimate has {self.est_shape.n}")
        if (self.gt_landmarks is not None and self.est_landmarks is not None
                and self.gt_landmarks.l != self.est_landmarks.l):
            raise DimensionError(f"{self.sample_id}: landmark counts differ")


def _verts(s) -> np.ndarray:
    return s.vertices if isinstance(s, Shape3D) else np.asarray(s, dtype=np.float64).reshape(-1, 3)


def mae_single(gt, est, align: str = "rigid", norm: str = "per-vertex") -> float:
    """Error of one reconstruction, in mm.

    ``align`` is ``"none"``, ``"rigid"`` or ``"similarity"`` (Procrustes of
    the estimate onto the ground truth).  ``norm="per-vertex"`` averages the
    per-vertex Euclidean distances; ``norm="l2"`` is the 2-norm of the whole
    3n difference vector divided by n.
    """
    g, e = _verts(gt), _verts(est)
    if g.shape != e.shape:
        raise DimensionError(f"gt has {g.shape[0]} vertices, estimate has {e.shape[0]}")
    if align not in ("none", "rigid", "similarity"):
        raise ValueError(f"unknown alignment mode {align!r}")
    if norm not in ("per-vertex", "l2"):
        raise ValueError(f"unknown norm {norm!r}")
    if np.array_equal(g, e):
        return 0.0  # skip alignment round-off
    if align == "rigid":
        _, e, _ = procrustes_align(e, g, with_scale=False)
    elif align == "similarity":
        _, e, _ = procrustes_align(e, g, with_scale=True)
    elif align != "none":
        raise ValueError(f"unknown alignment mode {align!r}")
    diff = np.asarray(e) - g
    if norm == "per-vertex":
        return float(np.mean(np.linalg.norm(diff, axis=1)))
    if norm == "l2":
        return float(np.linalg.norm(diff) / g.shape[0])
    raise ValueError(f"unknown norm {norm!r}")


def mae(records: Sequence[EvalRecord], align: str = "rigid", norm: str = "per-vertex") -> float:
    """Mean over records of :func:`mae_single`."""
    records = list(records)
    if not records:
        raise ValueError("no records")
    return float(np.mean([mae_single(r.gt_shape, r.est_shape, align, norm) for r in records]))


def npde_map(gt, est) -> np.ndarray:
    """Per-vertex depth error normalised by the ground-truth depth range."""
    g, e = _verts(gt), _verts(est)
    if g.shape != e.shape:
        raise DimensionError(f"gt has {g.shape[0]} vertices, estimate has {e.shape[0]}")
    zrange = g[:, 2].max() - g[:, 2].min()
    if not zrange > 0:
        raise ValueError("ground-truth depth range is zero")
    return np.abs(g[:, 2] - e[:, 2]) / zrange


def npde_summary(values) -> tuple:
    """(mean, std) of an NPDE map, in percent."""
    v = np.asarray(values, dtype=np.float64)
    return float(100.0 * v.mean()), float(100.0 * v.std())


def nme_single(gt: LandmarkSet2D, est: LandmarkSet2D, bbox) -> float:
    """Mean visible-landmark error over ``sqrt(w * h)`` of the box."""
    if gt.l != est.l:
        raise DimensionError(f"gt has {gt.l} landmarks, estimate has {est.l}")
    vis = gt.visible
    if not vis.any():
        raise ValueError("record has no visible ground-truth landmark")
    d = math.sqrt(float(bbox[2]) * float(bbox[3]))
    err = np.linalg.norm(est.points[vis] - gt.points[vis], axis=1)
    return float(err.sum() / vis.sum() / d)


def nme(records: Sequence[EvalRecord]) -> float:
    records = list(records)
    if not records:
        raise ValueError("no records")
    return float(np.mean([nme_single(r.gt_landmarks, r.est_landmarks, r.bbox) for r in records]))


def _bucket_label(lo, hi, last):
    return f"[{lo:g},{hi:g}{']' if last else ')'}"


@dataclass(frozen=True)
class BucketReport:
    """Per-bucket values plus the mean and sample std across populated buckets.

    Absent buckets carry ``None`` and are excluded from the summary columns.
    """

    metric: str
    labels: tuple
    values: tuple
    counts: tuple
    mean: float
    std: float
    summary_label: str = "Mean"

    def to_text(self, method: str = "Proposed", precision: int = 2) -> str:
        head = ["Method", *self.labels, self.summary_label]
        if self.summary_label == "Mean":
            head.append("Std")
        row = [method] + ["-" if v is None else f"{v:.{precision}f}" for v in self.values]
        row.append(f"{self.mean:.{precision}f}")
        if self.summary_label == "Mean":
            row.append(f"{self.std:.{precision}f}")
        widths = [max(len(a), len(b)) for a, b in zip(head, row)]
        fmt = "  ".join(f"{{:<{w}}}" if i == 0 else f"{{:>{w}}}" for i, w in enumerate(widths))
        return fmt.format(*head) + "\n" + fmt.format(*row) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bucket", "count", self.metric])
        for lab, cnt, val in zip(self.labels, self.counts, self.values):
            w.writerow([lab, cnt, "" if val is None else repr(val)])
        w.writerow([self.summary_label, sum(self.counts), repr(self.mean)])
        if self.summary_label == "Mean":
            w.writerow(["Std", "", repr(self.std)])
        return buf.getvalue()


def _record_values(records, metric, align, norm):
    if metric == "nme":
        return [nme_single(r.gt_landmarks, r.est_landmarks, r.bbox) for r in records]
    if metric == "mae":
        return [mae_single(r.gt_shape, r.est_shape, align, norm) for r in records]
    raise ValueError(f"unknown metric {metric!r}")


def pose_bucket_report(records: Sequence[EvalRecord], metric: str = "nme",
                       buckets=DEFAULT_BUCKETS, align: str = "rigid",
                       norm: str = "per-vertex") -> BucketReport:
    """Absolute-yaw buckets ``[0,30) [30,60) [60,90]`` with Mean and Std columns.

    Std is the sample standard deviation of the populated bucket values
    (0 when only one bucket is populated).
    """
    records = list(records)
    vals = np.asarray(_record_values(records, metric, align, norm))
    yaws = np.abs(np.array([r.yaw for r in records], dtype=np.float64))
    labels, values, counts = [], [], []
    for j, (lo, hi) in enumerate(buckets):
        last = j == len(buckets) - 1
        sel = (yaws >= lo) & ((yaws <= hi) if last else (yaws < hi))
        labels.append(_bucket_label(lo, hi, last))
        counts.append(int(sel.sum()))
        values.append(float(vals[sel].mean()) if sel.any() else None)
    present = [v for v in values if v is not None]
    if not present:
        raise ValueError("no record falls in any bucket")
    # correctly rounded, so equal buckets give exactly zero spread
    mean = statistics.fmean(present) if len(set(present)) > 1 else present[0]
    std = statistics.stdev(present) if len(present) > 1 else 0.0
    return BucketReport(metric, tuple(labels), tuple(values), tuple(counts), mean, std)


def yaw_table(records: Sequence[EvalRecord], metric: str = "mae", step: float = 10.0,
              max_yaw: float = 90.0, align: str = "rigid", norm: str = "per-vertex") -> BucketReport:
    """One column per ``+-yaw`` value (rounded to ``step``), largest first, plus Avg."""
    records = list(records)
    vals = np.asarray(_record_values(records, metric, align, norm))
    yaws = np.round(np.abs(np.array([r.yaw for r in records], dtype=np.float64)) / step) * step
    columns = np.arange(max_yaw, -0.5 * step, -step)
    labels, values, counts = [], [], []
    for c in columns:
        sel = yaws == c
        labels.append(f"+-{c:g}" if c else "0")
        counts.append(int(sel.sum()))
        values.append(float(vals[sel].mean()) if sel.any() else None)
    present = [v for v in values if v is not None]
    if not present:
        raise ValueError("no records")
    return BucketReport(metric, tuple(labels), tuple(values), tuple(counts),
                        float(np.mean(present)), 0.0, summary_label="Avg.")
