"""Grouped reductions used by every estimator.

Three kernels dominate runtime: per-stratum column sums, per-stratum
cross-product matrices, and applying a per-stratum coefficient matrix to
each row. Each has a numba implementation and a plain numpy one. The numba
path is used when numba imports cleanly, unless ``OPTREGIME_NUMBA=0``.
"""

import os

import numpy as np

_FLAG = os.environ.get("OPTREGIME_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "no", "off")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    HAVE_NUMBA = False


def group_sum_numpy(codes, X, n_groups):
    X = np.asarray(X, dtype=np.float64)
    out = np.empty((n_groups, X.shape[1]))
    for j in range(X.shape[1]):
        out[:, j] = np.bincount(codes, weights=X[:, j], minlength=n_groups)
    return out


def group_outer_numpy(codes, X, Z, n_groups):
    order = np.argsort(codes, kind="stable")
    counts = np.bincount(codes, minlength=n_groups)
    bounds = np.concatenate(([0], np.cumsum(counts)))
    Xs, Zs = X[order], Z[order]
    out = np.zeros((n_groups, X.shape[1], Z.shape[1]))
    for g in range(n_groups):
        lo, hi = bounds[g], bounds[g + 1]
        if hi > lo:
            out[g] = Xs[lo:hi].T @ Zs[lo:hi]
    return out


def rowwise_apply_numpy(codes, B, Z):
    return np.einsum("npq,nq->np", B[codes], Z)


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def group_sum_numba(codes, X, n_groups):
        n, d = X.shape
        out = np.zeros((n_groups, d))
        for i in range(n):
            g = codes[i]
            for j in range(d):
                out[g, j] += X[i, j]
        return out

    @numba.njit(cache=True)
    def group_outer_numba(codes, X, Z, n_groups):
        n, p = X.shape
        q = Z.shape[1]
        out = np.zeros((n_groups, p, q))
        for i in range(n):
            g = codes[i]
            for a in range(p):
                xa = X[i, a]
                if xa != 0.0:
                    for b in range(q):
                        out[g, a, b] += xa * Z[i, b]
        return out

    @numba.njit(cache=True)
    def rowwise_apply_numba(codes, B, Z):
        n, q = Z.shape
        p = B.shape[1]
        out = np.zeros((n, p))
        for i in range(n):
            g = codes[i]
            for a in range(p):
                acc = 0.0
                for b in range(q):
                    acc += B[g, a, b] * Z[i, b]
                out[i, a] = acc
        return out


USING_NUMBA = HAVE_NUMBA and _WANT_NUMBA


def _prep(codes, *arrays):
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    return (codes,) + tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


def group_sum(codes, X, n_groups):
    """Sum the rows of 2-D ``X`` within each group code."""
    codes, X = _prep(codes, X)
    if USING_NUMBA:
        return group_sum_numba(codes, X, n_groups)
    return group_sum_numpy(codes, X, n_groups)


def group_outer(codes, X, Z, n_groups):
    """Per-group ``X_g.T @ Z_g``, shape (n_groups, X.shape[1], Z.shape[1])."""
    codes, X, Z = _prep(codes, X, Z)
    if USING_NUMBA:
        return group_outer_numba(codes, X, Z, n_groups)
    return group_outer_numpy(codes, X, Z, n_groups)


def rowwise_apply(codes, B, Z):
    """Row i of the result is ``B[codes[i]] @ Z[i]``."""
    codes, B, Z = _prep(codes, B, Z)
    if USING_NUMBA:
        return rowwise_apply_numba(codes, B, Z)
    return rowwise_apply_numpy(codes, B, Z)


def group_mean(codes, X, n_groups, counts=None):
    """Per-group means of the columns of X, broadcast back to rows."""
    one_d = X.ndim == 1
    X2 = X[:, None] if one_d else X
    if counts is None:
        counts = np.bincount(codes, minlength=n_groups)
    sums = group_sum(codes, X2, n_groups)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    rows = means[codes]
    return rows[:, 0] if one_d else rows
