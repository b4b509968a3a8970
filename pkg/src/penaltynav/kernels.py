"""Backend selection for the objective kernel.

The compiled extension ``_kernels`` is used when it imports; otherwise the
pure-Python ``_pykernels`` takes over.  ``PENALTYNAV_BACKEND=python`` (or
``compiled``) forces a choice; forcing ``compiled`` without the extension
raises at import.
"""

from __future__ import annotations

import os

from . import _pykernels

__all__ = ["ProblemKernel", "BACKEND", "available_backends", "kernel_class"]

_requested = os.environ.get("PENALTYNAV_BACKEND", "auto").strip().lower()

try:
    from . import _kernels as _compiled
except ImportError:
    if _requested == "compiled":
        raise
    _compiled = None

if _requested not in ("auto", "python", "compiled"):
    raise ImportError(f"PENALTYNAV_BACKEND must be auto, python or compiled, not {_requested!r}")

_active = _pykernels if _requested == "python" or _compiled is None else _compiled

ProblemKernel = _active.ProblemKernel
BACKEND: str = _active.BACKEND


def available_backends() -> list[str]:
    return ["compiled", "python"] if _compiled is not None else ["python"]


def kernel_class(name: str):
    """Kernel class for ``name`` ("compiled" or "python"), regardless of the default."""
    if name == "python":
        return _pykernels.ProblemKernel
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernel extension is not built")
        return _compiled.ProblemKernel
    raise ValueError(f"unknown backend {name!r}")
