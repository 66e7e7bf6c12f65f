# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR x dense kernels used by neighbor-mean aggregation."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_matmul(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
               const double[::1] data, const double[:, ::1] dense):
    """Return S @ dense for S given in CSR form (rows = len(indptr) - 1)."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_cols = dense.shape[1]
    cdef Py_ssize_t i, k, c, j
    cdef double w
    out = np.zeros((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n_rows):
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                w = data[k]
                for c in range(n_cols):
                    o[i, c] += w * dense[j, c]
    return out


def csr_matmul_t(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                 const double[::1] data, const double[:, ::1] dense, Py_ssize_t n_out):
    """Return S.T @ dense for S in CSR form; n_out is the column count of S."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t n_cols = dense.shape[1]
    cdef Py_ssize_t i, k, c, j
    cdef double w
    out = np.zeros((n_out, n_cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n_rows):
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                w = data[k]
                for c in range(n_cols):
                    o[j, c] += w * dense[i, c]
    return out
