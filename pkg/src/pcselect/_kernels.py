"""Numba kernels for the solver hot path.

Everything here operates on raw CSR arrays (indptr, indices, data) with
within-row column indices sorted ascending. These loops sit inside timed
preconditioner applications, so they are jitted; the surrounding
orchestration stays in plain Python.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def csr_matvec(n, indptr, indices, data, x):
    y = np.zeros(n)
    for i in range(n):
        s = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * x[indices[k]]
        y[i] = s
    return y


@njit(cache=True)
def solve_lower(n, indptr, indices, data, b, unit):
    """Forward substitution for a lower-triangular CSR matrix.

    With unit=True the diagonal is implicit 1 (strict-lower storage);
    otherwise the diagonal entry must be stored in the row.
    """
    x = np.empty(n)
    for i in range(n):
        s = b[i]
        diag = 1.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j < i:
                s -= data[k] * x[j]
            elif j == i:
                diag = data[k]
        x[i] = s if unit else s / diag
    return x


@njit(cache=True)
def solve_upper(n, indptr, indices, data, b, unit):
    """Backward substitution for an upper-triangular CSR matrix."""
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = b[i]
        diag = 1.0
        for k in range(indptr[i], indptr[i + 1]):
            j = indices[k]
            if j > i:
                s -= data[k] * x[j]
            elif j == i:
                diag = data[k]
        x[i] = s if unit else s / diag
    return x


@njit(cache=True)
def solve_lower_transpose(n, indptr, indices, data, b):
    """Solve L^T x = b given L in lower-triangular CSR form (diagonal stored).

    Works column-wise on L's rows, so no explicit transpose is built.
    """
    w = b.copy()
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        diag = 1.0
        r0, r1 = indptr[i], indptr[i + 1]
        for k in range(r0, r1):
            if indices[k] == i:
                diag = data[k]
        xi = w[i] / diag
        x[i] = xi
        for k in range(r0, r1):
            j = indices[k]
            if j < i:
                w[j] -= data[k] * xi
    return x


@njit(cache=True)
def ilu1_pattern(n, aptr, aidx):
    """Symbolic pattern of ILU(1) for a sorted CSR pattern.

    Level-1 fill can only be created by a pair of original (level-0)
    entries, so the pattern is A plus its diagonal plus every (i, j) with
    A_ik != 0 and A_kj != 0 for some pivot k < min(i, j).
    """
    marker = np.full(n, -1, np.int64)
    counts = np.zeros(n, np.int64)
    for i in range(n):
        cnt = 0
        for s in range(aptr[i], aptr[i + 1]):
            j = aidx[s]
            if marker[j] != i:
                marker[j] = i
                cnt += 1
        if marker[i] != i:
            marker[i] = i
            cnt += 1
        for s in range(aptr[i], aptr[i + 1]):
            k = aidx[s]
            if k >= i:
                break
            for t in range(aptr[k], aptr[k + 1]):
                j = aidx[t]
                if j > k and marker[j] != i:
                    marker[j] = i
                    cnt += 1
        counts[i] = cnt
    pptr = np.zeros(n + 1, np.int64)
    for i in range(n):
        pptr[i + 1] = pptr[i] + counts[i]
    pidx = np.empty(pptr[n], np.int64)
    marker[:] = -1
    for i in range(n):
        pos = pptr[i]
        for s in range(aptr[i], aptr[i + 1]):
            j = aidx[s]
            if marker[j] != i:
                marker[j] = i
                pidx[pos] = j
                pos += 1
        if marker[i] != i:
            marker[i] = i
            pidx[pos] = i
            pos += 1
        for s in range(aptr[i], aptr[i + 1]):
            k = aidx[s]
            if k >= i:
                break
            for t in range(aptr[k], aptr[k + 1]):
                j = aidx[t]
                if j > k and marker[j] != i:
                    marker[j] = i
                    pidx[pos] = j
                    pos += 1
        pidx[pptr[i]:pptr[i + 1]].sort()
    return pptr, pidx


@njit(cache=True)
def ilu_factor_on_pattern(n, pptr, pidx, aptr, aidx, aval):
    """Numeric incomplete LU factorization restricted to a fixed pattern.

    The pattern must contain every entry of A, the full diagonal, and be
    sorted within rows. Returns (lu, fail_row); fail_row is -1 on success,
    otherwise the row where a zero-or-negative pivot was hit. The combined
    factor stores L strictly below the diagonal (unit diagonal implied)
    and U on and above it.
    """
    lu = np.zeros(pidx.size)
    # scatter A values into the (super)pattern slots
    for i in range(n):
        pa = aptr[i]
        for s in range(pptr[i], pptr[i + 1]):
            j = pidx[s]
            while pa < aptr[i + 1] and aidx[pa] < j:
                pa += 1
            if pa < aptr[i + 1] and aidx[pa] == j:
                lu[s] = aval[pa]
    w = np.zeros(n)
    pos = np.full(n, -1, np.int64)
    diag_slot = np.empty(n, np.int64)
    for i in range(n):
        r0, r1 = pptr[i], pptr[i + 1]
        for s in range(r0, r1):
            j = pidx[s]
            pos[j] = s
            w[j] = lu[s]
        for s in range(r0, r1):
            k = pidx[s]
            if k >= i:
                break
            pivot = lu[diag_slot[k]]
            f = w[k] / pivot
            w[k] = f
            for t in range(diag_slot[k] + 1, pptr[k + 1]):
                if pos[pidx[t]] >= 0:
                    w[pidx[t]] -= f * lu[t]
        ds = np.int64(-1)
        for s in range(r0, r1):
            j = pidx[s]
            lu[s] = w[j]
            if j == i:
                ds = s
            pos[j] = -1
        if ds < 0:
            return lu, i
        diag_slot[i] = ds
        if lu[ds] <= 0.0:
            return lu, i
    return lu, np.int64(-1)


@njit(cache=True)
def icc_factor(n, lptr, lidx, aptr, aidx, aval):
    """Incomplete Cholesky A ~= L L^T on a fixed lower-triangular pattern.

    The pattern must be sorted within rows with the diagonal as the last
    entry of every row. Returns (lval, fail_row); fail_row is -1 on
    success, otherwise the row with a non-positive diagonal.
    """
    lval = np.zeros(lidx.size)
    for i in range(n):
        pa = aptr[i]
        for s in range(lptr[i], lptr[i + 1]):
            j = lidx[s]
            while pa < aptr[i + 1] and aidx[pa] < j:
                pa += 1
            if pa < aptr[i + 1] and aidx[pa] == j:
                lval[s] = aval[pa]
    w = np.zeros(n)
    pos = np.full(n, -1, np.int64)
    for i in range(n):
        r0, r1 = lptr[i], lptr[i + 1]
        for s in range(r0, r1):
            pos[lidx[s]] = s
            w[lidx[s]] = lval[s]
        for s in range(r0, r1 - 1):
            j = lidx[s]
            acc = w[j]
            dj = lptr[j + 1] - 1
            for t in range(lptr[j], dj):
                k = lidx[t]
                if pos[k] >= 0:
                    acc -= w[k] * lval[t]
            w[j] = acc / lval[dj]
        acc = w[i]
        for s in range(r0, r1 - 1):
            acc -= w[lidx[s]] * w[lidx[s]]
        for s in range(r0, r1):
            j = lidx[s]
            lval[s] = w[j]
            pos[j] = -1
        if acc <= 0.0:
            return lval, i
        lval[r1 - 1] = np.sqrt(acc)
    return lval, np.int64(-1)
