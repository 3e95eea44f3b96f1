"""Select the compiled kernels when importable, else the NumPy fallback.

Set ``GRADFLOW_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("GRADFLOW_PURE_PYTHON", "") not in ("", "0"):
    kernels = _pykernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        kernels = _pykernels

BACKEND = kernels.BACKEND
