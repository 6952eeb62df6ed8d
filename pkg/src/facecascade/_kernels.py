"""Kernel backend selection.

The compiled extension is used when it was built; otherwise, or when
``FACECASCADE_BACKEND=python`` is set, the numpy implementations are used.
"""
from __future__ import annotations

import os

from . import _pykernels

_forced = os.environ.get("FACECASCADE_BACKEND", "").strip().lower()

try:
    if _forced == "python":
        raise ImportError("python backend forced")
    from . import _ckernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

sift_histograms = _impl.sift_histograms
rasterize = _impl.rasterize


def available_backends() -> dict:
    """Name -> kernel module for every backend importable in this process."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
