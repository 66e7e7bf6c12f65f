"""Pure numpy versions of the CSR kernels in ``_kernels.pyx``.

Summation order matches the compiled loops (row by row, nonzeros in stored
order), so both backends agree to rounding on every input.
"""
import numpy as np


def csr_matmul(indptr, indices, data, dense):
    n_rows = len(indptr) - 1
    out = np.zeros((n_rows, dense.shape[1]))
    if len(indices) == 0:
        return out
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    np.add.at(out, rows, data[:, None] * dense[indices])
    return out


def csr_matmul_t(indptr, indices, data, dense, n_out):
    n_rows = len(indptr) - 1
    out = np.zeros((n_out, dense.shape[1]))
    if len(indices) == 0:
        return out
    rows = np.repeat(np.arange(n_rows), np.diff(indptr))
    np.add.at(out, indices, data[:, None] * dense[rows])
    return out
