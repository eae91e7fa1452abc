"""Backend selection for the hot E-step kernel.

The compiled extension is used when it imports; set ``BBM_PURE_PYTHON=1``
to force the numpy fallback.
"""

import os

from . import _estep_py

BACKEND = "python"
estep = _estep_py.estep

if os.environ.get("BBM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._estep import estep  # noqa: F811
    except ImportError:
        pass
    else:
        BACKEND = "cython"

__all__ = ["BACKEND", "estep"]
