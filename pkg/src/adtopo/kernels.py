"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``ADTOPO_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

import numpy as np

from . import _pykernels

if os.environ.get("ADTOPO_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
        BACKEND = "python"


def _idx(a):
    return np.ascontiguousarray(a, dtype=np.int64).ravel()


def _val(a):
    return np.ascontiguousarray(a, dtype=np.float64).ravel()


def scatter_add_vector(out, idx, vals, impl=None):
    (impl or _impl).scatter_add_vector(out, _idx(idx), _val(vals))
    return out


def scatter_add_matrix(out, rows, cols, vals, impl=None):
    (impl or _impl).scatter_add_matrix(out, _idx(rows), _idx(cols), _val(vals))
    return out


def gather_vector(src, idx, impl=None):
    shape = np.shape(idx)
    return (impl or _impl).gather_vector(_val(src), _idx(idx)).reshape(shape)


def gather_matrix(src, rows, cols, impl=None):
    shape = np.shape(rows)
    src = np.ascontiguousarray(src, dtype=np.float64)
    return (impl or _impl).gather_matrix(src, _idx(rows), _idx(cols)).reshape(shape)


def gather_lowrank(left, right, rows, cols, impl=None):
    shape = np.shape(rows)
    left = np.ascontiguousarray(left, dtype=np.float64)
    right = np.ascontiguousarray(right, dtype=np.float64)
    return (impl or _impl).gather_lowrank(left, right, _idx(rows), _idx(cols)).reshape(shape)


def cone_weights(nelx, nely, radius, impl=None):
    return (impl or _impl).cone_weights(int(nelx), int(nely), float(radius))
