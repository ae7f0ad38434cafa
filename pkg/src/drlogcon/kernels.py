"""Backend selection for the numerical kernels.

The compiled ``_native`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` are used. Setting the environment
variable ``DRLOGCON_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os

from . import _pykernels
from ._pykernels import KernelConvergenceError

BACKEND = "python"
_impl = _pykernels
if os.environ.get("DRLOGCON_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _native as _impl  # type: ignore[no-redef]
        BACKEND = "native"
    except ImportError:  # extension not built
        _impl = _pykernels

pava = _impl.pava
convex_lse_solve = _impl.convex_lse_solve
logconcave_solve = _impl.logconcave_solve
jfuncs = _impl.jfuncs

__all__ = ["BACKEND", "KernelConvergenceError", "pava", "convex_lse_solve",
           "logconcave_solve", "jfuncs"]
