"""Hot kernels: the compiled extension when built, else the numpy fallback.

Set ``TRGAN_PRIVACY_PURE=1`` to force the fallback.
"""
import os

from . import _glcm_py

try:
    if os.environ.get("TRGAN_PRIVACY_PURE"):
        raise ImportError("pure-Python kernels requested")
    from . import _glcm as _glcm_impl
    COMPILED = True
except ImportError:
    _glcm_impl = _glcm_py
    COMPILED = False

import numpy as np


def _checked(impl):
    def glcm_counts(levels_map, mask, levels, offsets):
        levels_map = np.ascontiguousarray(levels_map, dtype=np.int32)
        mask = np.ascontiguousarray(mask, dtype=np.uint8)
        offsets = np.ascontiguousarray(offsets, dtype=np.int32)
        if levels_map.shape != mask.shape or levels_map.ndim != 3:
            raise ValueError("levels_map and mask must be 3-D arrays of one shape")
        if offsets.ndim != 2 or offsets.shape[1] != 3:
            raise ValueError("offsets must have shape (k, 3)")
        if levels_map.size and (levels_map.min() < 0 or levels_map.max() >= levels):
            raise ValueError(f"levels_map values must lie in [0, {levels})")
        if mask.size and mask.max() > 1:
            raise ValueError("mask must be binary")
        return impl(levels_map, mask, levels, offsets)
    glcm_counts.__doc__ = impl.__doc__
    return glcm_counts


glcm_counts = _checked(_glcm_impl.glcm_counts)
glcm_counts_py = _checked(_glcm_py.glcm_counts)

__all__ = ["COMPILED", "glcm_counts", "glcm_counts_py"]
