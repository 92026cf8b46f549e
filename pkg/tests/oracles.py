"""Independent reference implementations used as test oracles.

These are written row-by-row from the estimating equation and share no
code with the package beyond reading dataset columns.
"""

import numpy as np


def centered_design(ds, arm, controls, moderators, p_tilde):
    """Rows of [Z | (A - pt) S], weights I * W and outcomes, single arm."""
    X, wts, y, cluster = [], [], [], []
    for k in range(len(ds)):
        avail = ds.available[k] == 1
        a = 1.0 if ds.arm[k] == arm else 0.0
        p = ds.rand_prob[k, list(ds.arms).index(arm)]
        z = [1.0] + [ds.column(c)[k] for c in controls]
        s = [1.0] + [ds.column(c)[k] for c in moderators]
        if avail:
            w = p_tilde / p if a == 1 else (1 - p_tilde) / (1 - p)
        else:
            w = 0.0
        X.append(z + [(a - p_tilde) * v for v in s])
        wts.append(w)
        y.append(ds.outcome[k] if avail else 0.0)
        cluster.append(ds.participant[k])
    return np.array(X), np.array(wts), np.array(y), np.array(cluster, dtype=object)


def dense_wls(X, w, y):
    """Normal equations solved by a dense LU solve."""
    B = X.T @ (w[:, None] * X)
    return np.linalg.solve(B, X.T @ (w * y))


def clustered_sandwich(X, w, y, theta, cluster):
    B = X.T @ (w[:, None] * X)
    Binv = np.linalg.inv(B)
    meat = np.zeros_like(B)
    for c in dict.fromkeys(cluster):
        rows = cluster == c
        u = np.zeros(X.shape[1])
        for k in np.flatnonzero(rows):
            u += w[k] * (y[k] - X[k] @ theta) * X[k]
        meat += np.outer(u, u)
    return Binv @ meat @ Binv


def mancl_derouen(X, w, y, theta, cluster):
    """Explicit T_i x T_i residual inflation (I - H_i)^{-1} r_i."""
    B = X.T @ (w[:, None] * X)
    Binv = np.linalg.inv(B)
    meat = np.zeros_like(B)
    for c in dict.fromkeys(cluster):
        rows = np.flatnonzero(cluster == c)
        Xi, Wi = X[rows], np.diag(w[rows])
        ri = y[rows] - Xi @ theta
        H = Xi @ Binv @ Xi.T @ Wi
        r_adj = np.linalg.solve(np.eye(len(rows)) - H, ri)
        u = Xi.T @ Wi @ r_adj
        meat += np.outer(u, u)
    return Binv @ meat @ Binv
