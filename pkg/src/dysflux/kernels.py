"""Kernel backend selection: compiled extension if built, numpy otherwise."""
from __future__ import annotations

from dysflux import _kernels_py

try:
    from dysflux import _kernels as _impl

    HAVE_COMPILED = True
except ImportError:  # extension not built; numpy fallback
    _impl = _kernels_py
    HAVE_COMPILED = False

BACKEND = _impl.BACKEND_NAME

viterbi_path = _impl.viterbi_path
dtw_grid = _impl.dtw_grid


def available_backends() -> dict[str, object]:
    """Backend name -> kernel module, for parity tests and benchmarks."""
    out = {"python": _kernels_py}
    if HAVE_COMPILED:
        out["cython"] = _impl
    return out
