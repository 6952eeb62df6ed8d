"""Binary model container.

Layout::

    b"FCASCADE"                      8-byte magic
    uint32 LE   format_version
    uint64 LE   header length H
    H bytes     UTF-8 JSON header
    payload     little-endian blocks, row-major:
                mean PEN shape (3n f64), landmark template (2l f64),
                landmark indices (l i64), faces (m x 3 i64) or adjacency
                (offsets n+1 i64, neighbours i64), then per stage the
                landmark weights (2l x dim f64) and shape weights (6n x 2l f64)

The header records K, n, l, descriptor_dim, ridge settings, the feature
config, block sizes and a SHA-256 digest of the payload.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .cascade import FORMAT_VERSION, CascadeModel, LandmarkStage, ShapeStage
from .errors import ModelFormatError
from .features import FeatureConfig
from .shape_model import ShapePrior

__all__ = ["save_model", "load_model", "MAGIC"]

MAGIC = b"FCASCADE"
_F64 = np.dtype("<f8")
_I64 = np.dtype("<i8")


def _blocks(model: CascadeModel):
    p = model.prior
    yield p.mean_pen_shape.astype(_F64)
    yield p.mean_landmarks_2d.astype(_F64)
    yield p.landmark_indices.astype(_I64)
    if p.faces is not None:
        yield p.faces.astype(_I64).reshape(-1)
    else:
        lens = np.array([len(a) for a in p.adjacency], dtype=np.int64)
        yield np.concatenate([[0], np.cumsum(lens)]).astype(_I64)
        yield (np.concatenate(p.adjacency) if lens.sum() else np.zeros(0)).astype(_I64)
    for lm, sh in model.stages:
        yield np.ascontiguousarray(lm.weights, dtype=_F64).reshape(-1)
        yield np.ascontiguousarray(sh.weights, dtype=_F64).reshape(-1)


def save_model(model: CascadeModel, path) -> None:
    payload = b"".join(b.tobytes() for b in _blocks(model))
    p = model.prior
    header = {
        "format_version": FORMAT_VERSION,
        "K": model.K,
        "n": p.n,
        "l": p.l,
        "descriptor_dim": model.feature_dim // p.l,
        "feature_dim": model.feature_dim,
        "ridge": model.ridge,
        "ridge_factor": model.ridge_factor,
        "stage_lambdas": [list(x) for x in model.stage_lambdas],
        "feature_config": model.feature_config.to_dict(),
        "n_faces": None if p.faces is None else int(p.faces.shape[0]),
        "adjacency_entries": None if p.faces is not None else int(sum(len(a) for a in p.adjacency)),
        "history": model.history,
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_model(path) -> CascadeModel:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 12 or data[:len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a cascade model file")
    version, hlen = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")
    start = len(MAGIC) + 12
    if len(data) < start + hlen:
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header ({exc})") from exc
    payload = data[start + hlen:]
    if len(payload) != header.get("payload_bytes"):
        raise ModelFormatError(f"{path}: payload is {len(payload)} bytes, header says "
                               f"{header.get('payload_bytes')} (truncated or padded file)")
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ModelFormatError(f"{path}: payload checksum mismatch")

    n, l, K, dim = header["n"], header["l"], header["K"], header["feature_dim"]
    pos = 0

    def take(count, dtype):
        nonlocal pos
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(payload):
            raise ModelFormatError(f"{path}: payload shorter than the header describes")
        out = np.frombuffer(payload, dtype=dtype, count=count, offset=pos).astype(dtype.newbyteorder("="))
        pos += nbytes
        return out

    mean = take(3 * n, _F64)
    tmpl = take(2 * l, _F64)
    idx = take(l, _I64)
    if header["n_faces"] is not None:
        faces = take(3 * header["n_faces"], _I64).reshape(-1, 3)
        prior = ShapePrior(mean, tmpl, idx, faces=faces)
    else:
        offsets = take(n + 1, _I64)
        nbrs = take(header["adjacency_entries"], _I64)
        adjacency = [nbrs[offsets[i]:offsets[i + 1]] for i in range(n)]
        prior = ShapePrior(mean, tmpl, idx, adjacency=adjacency)
    stages = []
    for _ in range(K):
        wu = take(2 * l * dim, _F64).reshape(2 * l, dim)
        ws = take(6 * n * 2 * l, _F64).reshape(6 * n, 2 * l)
        stages.append((LandmarkStage(wu), ShapeStage(ws)))
    if pos != len(payload):
        raise ModelFormatError(f"{path}: {len(payload) - pos} trailing payload bytes")
    return CascadeModel(tuple(stages), prior, FeatureConfig.from_dict(header["feature_config"]),
                        header["ridge"], header["ridge_factor"],
                        tuple(tuple(x) for x in header["stage_lambdas"]), header["history"],
                        header["format_version"])
