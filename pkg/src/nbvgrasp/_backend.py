"""Kernel selection: compiled extension when importable, numpy otherwise.

Set ``NBVGRASP_PURE_PYTHON=1`` to force the numpy kernels.
"""

import logging
import os

from . import _kernels_py

log = logging.getLogger(__name__)

_kernels = None
if os.environ.get("NBVGRASP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels  # type: ignore[attr-defined,no-redef]
    except ImportError:  # extension not built
        log.debug("compiled kernels unavailable; using numpy fallback")
        _kernels = None

BACKEND = "cython" if _kernels is not None else "python"
_impl = _kernels if _kernels is not None else _kernels_py

primitive_sdf = _impl.primitive_sdf
scene_sdf = _impl.scene_sdf
sphere_trace = _impl.sphere_trace
tsdf_integrate = _impl.tsdf_integrate
