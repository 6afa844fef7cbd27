"""Attention kernel selection.

The compiled extension is preferred when importable; the numpy twin is the
fallback. ``NEUROALIGN_BACKEND`` forces the choice: ``cython``, ``numpy``,
or ``auto`` (default).
"""

from __future__ import annotations

import os

from . import backend_np

try:
    from neuroalign import _kernels as _compiled
except ImportError:
    _compiled = None


def select_backend(choice: str | None = None):
    """Return (module, name) for the requested backend."""
    if choice is None:
        choice = os.environ.get("NEUROALIGN_BACKEND", "auto")
    choice = choice.strip().lower() or "auto"
    if choice not in ("auto", "cython", "numpy"):
        raise ValueError(f"unknown backend {choice!r}")
    if choice == "numpy":
        return backend_np, "numpy"
    if _compiled is not None:
        return _compiled, "cython"
    if choice == "cython":
        raise ImportError("compiled kernels requested but not built")
    return backend_np, "numpy"


_impl, BACKEND = select_backend()

mha_forward = _impl.mha_forward
mha_backward = _impl.mha_backward
guidance_bce = _impl.guidance_bce
