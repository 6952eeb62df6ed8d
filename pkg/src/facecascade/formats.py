"""Readers and writers for meshes, landmarks, images, manifests and config files.

All formats are plain text except binary PGM (P5).  See ``docs/formats.md``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import LandmarkSet2D, MappingMatrix
from .errors import DimensionError, FormatError
from .features import GrayImage
from .shape_model import Shape3D

__all__ = [
    "read_mesh", "write_mesh", "read_obj", "write_obj", "read_ply", "write_ply",
    "read_landmarks", "write_landmarks", "read_indices", "write_indices",
    "read_image", "write_pgm", "write_mapping", "read_mapping",
    "ManifestSample", "read_manifest", "write_manifest", "read_config",
]


def _fmt(x: float) -> str:
    return f"{x:.9g}"


# ---------------------------------------------------------------- meshes

def read_obj(path, expected_n: int | None = None) -> Shape3D:
    path = Path(path)
    verts, faces = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                if len(tok) < 4:
                    raise FormatError("vertex line needs 3 coordinates", path, ln)
                try:
                    verts.append([float(t) for t in tok[1:4]])
                except ValueError as exc:
                    raise FormatError(f"malformed vertex line ({exc})", path, ln) from exc
            elif tok[0] == "f":
                try:
                    idx = [int(t.split("/")[0]) for t in tok[1:]]
                except ValueError as exc:
                    raise FormatError(f"malformed face line ({exc})", path, ln) from exc
                if len(idx) < 3:
                    raise FormatError("face needs at least 3 vertices", path, ln)
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
    return _finish_mesh(path, verts, faces, expected_n)


def _finish_mesh(path, verts, faces, expected_n):
    if not verts:
        raise FormatError("mesh has no vertices", path)
    if expected_n is not None and len(verts) != expected_n:
        raise DimensionError(f"{path}: mesh has {len(verts)} vertices, expected {expected_n}")
    try:
        return Shape3D(np.array(verts), np.array(faces, dtype=np.int64) if faces else None)
    except (ValueError, DimensionError) as exc:
        raise FormatError(str(exc), path) from exc


def write_obj(shape: Shape3D, path) -> None:
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in shape.vertices]
    if shape.faces is not None:
        lines += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in shape.faces]
    Path(path).write_text("".join(lines))


def read_ply(path, expected_n: int | None = None) -> Shape3D:
    path = Path(path)
    with open(path) as fh:
        lines = fh.readlines()
    if not lines or lines[0].strip() != "ply":
        raise FormatError("missing 'ply' magic", path, 1)
    order = []
    end = None
    for ln, line in enumerate(lines[1:], 2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and (len(tok) < 2 or tok[1] != "ascii"):
            raise FormatError(f"only ascii PLY is supported, got {tok[1]}", path, ln)
        if tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise FormatError("element line needs a name and a count", path, ln)
            order.append((tok[1], int(tok[2])))
        if tok[0] == "end_header":
            end = ln
            break
    if end is None:
        raise FormatError("missing end_header", path)
    body = [(ln, l.split()) for ln, l in enumerate(lines[end:], end + 1) if l.strip()]
    verts, faces = [], []
    pos = 0
    for elem, count in order:
        for _ in range(count):
            if pos >= len(body):
                raise FormatError(f"file ends inside the {elem} block", path)
            ln, tok = body[pos]
            pos += 1
            if elem not in ("vertex", "face"):
                continue
            try:
                if elem == "vertex":
                    if len(tok) < 3:
                        raise ValueError("need 3 coordinates")
                    verts.append([float(t) for t in tok[:3]])
                else:
                    k = int(tok[0])
                    idx = [int(t) for t in tok[1:1 + k]]
                    if len(idx) != k or k < 3:
                        raise ValueError("bad face arity")
                    for j in range(1, k - 1):
                        faces.append([idx[0], idx[j], idx[j + 1]])
            except (ValueError, IndexError) as exc:
                raise FormatError(f"malformed {elem} line ({exc})", path, ln) from exc
    return _finish_mesh(path, verts, faces, expected_n)


def write_ply(shape: Shape3D, path) -> None:
    nf = 0 if shape.faces is None else shape.faces.shape[0]
    out = ["ply\n", "format ascii 1.0\n", f"element vertex {shape.n}\n",
           "property double x\n", "property double y\n", "property double z\n"]
    if nf:
        out += [f"element face {nf}\n", "property list uchar int vertex_indices\n"]
    out.append("end_header\n")
    out += [f"{_fmt(x)} {_fmt(y)} {_fmt(z)}\n" for x, y, z in shape.vertices]
    if nf:
        out += [f"3 {a} {b} {c}\n" for a, b, c in shape.faces]
    Path(path).write_text("".join(out))


def read_mesh(path, expected_n: int | None = None) -> Shape3D:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return read_obj(path, expected_n)
    if suffix == ".ply":
        return read_ply(path, expected_n)
    raise FormatError(f"unsupported mesh extension {suffix!r}", path)


def write_mesh(shape: Shape3D, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        write_obj(shape, path)
    elif suffix == ".ply":
        write_ply(shape, path)
    else:
        raise FormatError(f"unsupported mesh extension {suffix!r}", path)


# ---------------------------------------------------------------- landmarks

def read_landmarks(path, expected_l: int | None = None) -> LandmarkSet2D:
    """One landmark per line: ``u v visible`` with visible in {0, 1}."""
    path = Path(path)
    pts, vis = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if len(tok) != 3:
                raise FormatError(f"expected 'u v visible', got {len(tok)} tokens", path, ln)
            try:
                u, v = float(tok[0]), float(tok[1])
            except ValueError as exc:
                raise FormatError(f"non-numeric token ({exc})", path, ln) from exc
            if tok[2] not in ("0", "1"):
                raise FormatError(f"visibility must be 0 or 1, got {tok[2]!r}", path, ln)
            pts.append((u, v))
            vis.append(tok[2] == "1")
    if expected_l is not None and len(pts) != expected_l:
        raise DimensionError(f"{path}: {len(pts)} landmarks, expected {expected_l}")
    return LandmarkSet2D(np.array(pts).reshape(-1, 2), np.array(vis, dtype=bool))


def write_landmarks(lms: LandmarkSet2D, path) -> None:
    Path(path).write_text("".join(f"{u!r} {v!r} {int(s)}\n" for (u, v), s in
                                  zip(lms.points.tolist(), lms.visible)))


def read_indices(path) -> np.ndarray:
    """Landmark vertex indices, one integer per line."""
    path = Path(path)
    out = []
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        s = line.split("#")[0].strip()
        if not s:
            continue
        try:
            out.append(int(s))
        except ValueError as exc:
            raise FormatError(f"not an integer: {s!r}", path, ln) from exc
    return np.array(out, dtype=np.int64)


def write_indices(indices, path) -> None:
    Path(path).write_text("".join(f"{int(i)}\n" for i in indices))


def write_mapping(m: MappingMatrix, path) -> None:
    """Two lines of four numbers."""
    Path(path).write_text("".join(" ".join(repr(float(x)) for x in row) + "\n"
                                  for row in np.asarray(m)))


def read_mapping(path) -> MappingMatrix:
    rows = [line.split() for line in Path(path).read_text().splitlines() if line.strip()]
    try:
        return MappingMatrix(np.array(rows, dtype=np.float64))
    except (ValueError, DimensionError) as exc:
        raise FormatError(f"bad mapping matrix ({exc})", path) from exc


# ---------------------------------------------------------------- images

def _pnm_tokens(data: bytes, count: int, path):
    """First ``count`` header tokens (skipping comments) and the payload offset."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated header", path)
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_image(path) -> GrayImage:
    """PGM (P2 ascii or P5 binary, 8 or 16 bit) scaled to [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"unsupported image magic {magic!r}; only PGM P2/P5 is read", path)
    (_, w, h, maxval), off = _pnm_tokens(data, 4, path)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError("non-numeric PGM header", path) from exc
    if not (w > 0 and h > 0 and 0 < maxval < 65536):
        raise FormatError(f"bad PGM header {w}x{h} maxval {maxval}", path)
    if magic == b"P5":
        dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = w * h * dt.itemsize
        if len(data) - off < need:
            raise FormatError(f"truncated payload: {len(data) - off} of {need} bytes", path)
        raw = np.frombuffer(data, dtype=dt, count=w * h, offset=off).astype(np.float64)
    else:
        toks = data[off - 1:].split()
        if len(toks) < w * h:
            raise FormatError(f"truncated payload: {len(toks)} of {w * h} samples", path)
        try:
            raw = np.array([int(t) for t in toks[:w * h]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError("non-numeric sample", path) from exc
    if raw.max(initial=0) > maxval:
        raise FormatError("sample exceeds maxval", path)
    return GrayImage((raw / maxval).reshape(h, w))


def write_pgm(image, path, maxval: int = 255) -> None:
    """Binary PGM; intensities in [0, 1] are rounded to ``maxval`` levels."""
    px = image.pixels if isinstance(image, GrayImage) else np.asarray(image, dtype=np.float64)
    q = np.clip(np.rint(px * maxval), 0, maxval)
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(q.astype(dt).tobytes())


# ---------------------------------------------------------------- manifests

_MANIFEST_COLUMNS = ("image", "bbox", "landmarks", "pen_shape", "expr_shape", "yaw", "subject", "fold")


@dataclass(frozen=True)
class ManifestSample:
    """One row of a dataset manifest; paths are absolute after loading."""

    image: Path
    bbox: tuple
    landmarks: Path
    pen_shape: Path | None
    expr_shape: Path | None
    yaw: float
    subject: str
    fold: int = -1
    extra: dict = field(default_factory=dict)

    def with_fold(self, fold: int) -> "ManifestSample":
        return replace(self, fold=fold)


def read_manifest(path, check_files: bool = True) -> list:
    """Tab-separated, one sample per line, header row naming the columns."""
    path = Path(path)
    base = path.parent
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or tuple(rows[0][:len(_MANIFEST_COLUMNS)]) != _MANIFEST_COLUMNS:
        raise FormatError(f"manifest header must start with {', '.join(_MANIFEST_COLUMNS)}", path, 1)
    out = []
    for ln, row in enumerate(rows[1:], 2):
        if not row or row[0].startswith("#"):
            continue
        if len(row) < len(_MANIFEST_COLUMNS):
            raise FormatError(f"expected {len(_MANIFEST_COLUMNS)} columns, got {len(row)}", path, ln)
        try:
            bbox = tuple(float(x) for x in row[1].split(","))
            if len(bbox) != 4:
                raise ValueError("bbox needs x,y,w,h")
            yaw = float(row[5])
            fold = int(row[7]) if row[7] else -1
        except ValueError as exc:
            raise FormatError(str(exc), path, ln) from exc

        def resolve(p):
            return None if p in ("", "-") else (base / p).resolve()

        sample = ManifestSample(resolve(row[0]), bbox, resolve(row[2]), resolve(row[3]),
                                resolve(row[4]), yaw, row[6], fold,
                                dict(zip(rows[0][len(_MANIFEST_COLUMNS):], row[len(_MANIFEST_COLUMNS):])))
        if check_files:
            for p in (sample.image, sample.landmarks, sample.pen_shape, sample.expr_shape):
                if p is not None and not p.exists():
                    raise FormatError(f"referenced file does not exist: {p}", path, ln)
        out.append(sample)
    return out


def write_manifest(samples, path) -> None:
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        if p is None:
            return "-"
        p = Path(p).resolve()
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    samples = list(samples)
    extra = list(samples[0].extra) if samples else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow([*_MANIFEST_COLUMNS, *extra])
        for s in samples:
            w.writerow([rel(s.image), ",".join(repr(float(b)) for b in s.bbox), rel(s.landmarks),
                        rel(s.pen_shape), rel(s.expr_shape), repr(float(s.yaw)), s.subject, s.fold,
                        *(s.extra.get(k, "") for k in extra)])


# ---------------------------------------------------------------- config

def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment; keys are normalised to snake_case."""
    path = Path(path)
    out = {}
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        if "=" not in s:
            raise FormatError(f"expected 'key = value', got {s!r}", path, ln)
        k, v = (x.strip() for x in s.split("=", 1))
        if not k:
            raise FormatError("empty key", path, ln)
        out[k.replace("-", "_")] = v
    return out
