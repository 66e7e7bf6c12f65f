"""Backend selection for the sparse aggregation kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``KTNLAB_PURE_PYTHON=1`` to force the fallback, or call
:func:`set_backend` at runtime.
"""
import os

import numpy as np

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

HAVE_COMPILED = _compiled is not None
BACKEND = "python"
_impl = _fallback


def set_backend(name):
    """Select ``"cython"`` or ``"python"`` for calls without an explicit backend."""
    global BACKEND, _impl
    if name == "cython":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernels are not built")
        _impl = _compiled
    elif name == "python":
        _impl = _fallback
    else:
        raise ValueError(f"backend must be 'cython' or 'python', got {name!r}")
    BACKEND = name


if HAVE_COMPILED and os.environ.get("KTNLAB_PURE_PYTHON", "") not in ("1", "true", "yes"):
    set_backend("cython")


def _prep(indptr, indices, data, dense):
    return (
        np.ascontiguousarray(indptr, dtype=np.int64),
        np.ascontiguousarray(indices, dtype=np.int64),
        np.ascontiguousarray(data, dtype=np.float64),
        np.ascontiguousarray(dense, dtype=np.float64),
    )


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _fallback
    if backend == "cython" and HAVE_COMPILED:
        return _compiled
    raise ValueError(f"backend {backend!r} is not available")


def csr_matmul(indptr, indices, data, dense, backend=None):
    """S @ dense where S is (indptr, indices, data) CSR."""
    return _pick(backend).csr_matmul(*_prep(indptr, indices, data, dense))


def csr_matmul_t(indptr, indices, data, dense, n_out, backend=None):
    """S.T @ dense where S is CSR with ``n_out`` columns."""
    return _pick(backend).csr_matmul_t(*_prep(indptr, indices, data, dense), int(n_out))
