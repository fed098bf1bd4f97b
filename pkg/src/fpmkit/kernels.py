"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the NumPy
fallback is used.  Set ``FPMKIT_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

LOSS_CODES = _kernels_py.LOSS_CODES

_compiled = None
if os.environ.get("FPMKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py

gather_windows = _impl.gather_windows
scatter_add_windows = _impl.scatter_add_windows
intensity_adjoint = _impl.intensity_adjoint
adam_update = _impl.adam_update


def backend_module(name: str):
    """Return the kernel module for ``"python"`` or ``"compiled"``."""
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")
