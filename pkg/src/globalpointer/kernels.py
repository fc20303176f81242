"""Kernel backend selection.

The compiled Cython extension is used when it imports; otherwise the numpy
fallback is used. Set ``GLOBALPOINTER_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("GLOBALPOINTER_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from ._ext import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
else:
    _compiled = None

if _compiled is not None:
    apply_op = _compiled.apply_op
    adjoint = _compiled.adjoint
    schur = _compiled.schur
    BACKEND = "cython"
else:
    apply_op = _pykernels.apply_op
    adjoint = _pykernels.adjoint
    schur = _pykernels.schur


def compiled_module():
    """The compiled kernel module, or ``None`` when unavailable."""
    return _compiled
