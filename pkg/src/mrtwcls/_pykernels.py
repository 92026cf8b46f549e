"""Pure-numpy versions of the per-participant reduction kernels.

Used when the compiled ``_ckernels`` extension is not available.  Every
function here has an identically named, identically behaving counterpart in
``_ckernels.pyx``.
"""

import numpy as np


def cluster_scores(X, weight, resid, starts):
    """Per-participant score sums ``U_i = sum_t weight_t resid_t X_t``.

    ``starts`` holds the first row of each participant; rows are contiguous.
    Returns an ``(n, q)`` array.
    """
    X = np.asarray(X, dtype=float)
    contrib = X * (np.asarray(weight, dtype=float) * np.asarray(resid, dtype=float))[:, None]
    if len(starts) == 0:
        return np.zeros((0, X.shape[1]))
    return np.add.reduceat(contrib, np.asarray(starts, dtype=np.intp), axis=0)


def cluster_grams(X, weight, starts):
    """Per-participant weighted Gram matrices ``G_i = sum_t weight_t X_t X_t^T``.

    Returns an ``(n, q, q)`` array.
    """
    X = np.asarray(X, dtype=float)
    outer = X[:, :, None] * (X * np.asarray(weight, dtype=float)[:, None])[:, None, :]
    if len(starts) == 0:
        return np.zeros((0, X.shape[1], X.shape[1]))
    return np.add.reduceat(outer, np.asarray(starts, dtype=np.intp), axis=0)


def ar1_recursion(intercept, coef, y0, shocks):
    """Run ``y[:, t+1] = intercept[:, t] + coef * y[:, t] + shocks[:, t]``.

    ``intercept`` and ``shocks`` are ``(n, T)``; returns the ``(n, T + 1)``
    path whose first column is ``y0``.
    """
    intercept = np.asarray(intercept, dtype=float)
    shocks = np.asarray(shocks, dtype=float)
    n, T = intercept.shape
    out = np.empty((n, T + 1))
    out[:, 0] = y0
    for t in range(T):
        out[:, t + 1] = intercept[:, t] + coef * out[:, t] + shocks[:, t]
    return out
