"""Backend selection for the numeric hot loops.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``E11_PURE_PYTHON`` is set to a non-empty value other
than ``0``, the numpy fallback is used.
"""

from __future__ import annotations

import os

from . import _fallback

_force_pure = os.environ.get("E11_PURE_PYTHON", "") not in ("", "0")

if _force_pure:
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

chunk_item_mean = _impl.chunk_item_mean
loess_grid = _impl.loess_grid

__all__ = ["BACKEND", "chunk_item_mean", "loess_grid"]
