"""Kernel dispatch: compiled extension when built, numpy fallback otherwise.

Set ``MRTWCLS_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

try:
    if os.environ.get("MRTWCLS_PURE_PYTHON"):
        raise ImportError("pure-python kernels requested")
    from . import _ckernels as _impl

    BACKEND = "compiled"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"

cluster_scores = _impl.cluster_scores
cluster_grams = _impl.cluster_grams
ar1_recursion = _impl.ar1_recursion

__all__ = ["BACKEND", "ar1_recursion", "cluster_grams", "cluster_scores"]
