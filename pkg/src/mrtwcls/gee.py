"""Gaussian/identity-link GEE with independence, exchangeable and AR(1)
working correlations.

This is a comparator, not a general GEE engine: it exists to show how a
non-independence working correlation picks up bias when the mean model
conditions on a covariate that depends on earlier outcomes.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import MrtDataset
from .design import INTERCEPT, parse_term, term_name
from .errors import InputError, NotConverged, RankDeficient, ShapeError, SpecViolation
from .estimator import inference, solve_wls
from .kernels import cluster_scores

INDEPENDENCE = "independence"
EXCHANGEABLE = "exchangeable"
AR1 = "ar1"
_STRUCTURES = (INDEPENDENCE, EXCHANGEABLE, AR1)
RHO_CLAMP = 0.99


@dataclass(frozen=True)
class GeeSpec:
    """Mean model ``a0 + a'X + A (b0 + b'X_int)`` and working correlation.

    ``covariates`` are the main-effect terms and ``interactions`` the terms
    multiplied by the treatment indicator; both intercepts are implicit.
    """

    covariates: tuple = ()
    interactions: tuple = ()
    working_correlation: str = INDEPENDENCE
    arm: str | None = None
    max_iter: int = 50
    tol: float = 1e-8

    def __post_init__(self):
        wc = str(self.working_correlation).lower().replace("-", "").replace("(", "").replace(")", "")
        wc = {"ind": INDEPENDENCE, "exch": EXCHANGEABLE, "cs": EXCHANGEABLE,
              "compoundsymmetry": EXCHANGEABLE, "autoregressive": AR1}.get(wc, wc)
        if wc not in _STRUCTURES:
            raise SpecViolation(f"unknown working correlation {self.working_correlation!r}")
        if not self.tol > 0:
            raise SpecViolation("tol must be positive")
        if int(self.max_iter) < 1:
            raise SpecViolation("max_iter must be at least 1")
        object.__setattr__(self, "working_correlation", wc)
        object.__setattr__(self, "covariates", tuple(parse_term(t) for t in self.covariates))
        object.__setattr__(self, "interactions", tuple(parse_term(t) for t in self.interactions))
        object.__setattr__(self, "max_iter", int(self.max_iter))

    @classmethod
    def from_dict(cls, d) -> "GeeSpec":
        known = {"covariates", "interactions", "working_correlation", "arm", "max_iter", "tol"}
        extra = set(d) - known
        if extra:
            raise SpecViolation(f"unknown GEE spec keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "covariates": [term_name(t) for t in self.covariates],
            "interactions": [term_name(t) for t in self.interactions],
            "working_correlation": self.working_correlation,
            "arm": self.arm,
            "max_iter": self.max_iter,
            "tol": self.tol,
        }


@dataclass(frozen=True, eq=False)
class GeeResult:
    names: tuple[str, ...]
    coefficients: np.ndarray
    rho: float
    sigma2: float
    vcov: np.ndarray
    se: np.ndarray
    hotelling: np.ndarray
    p_value: np.ndarray
    lcl: np.ndarray
    ucl: np.ndarray
    df: tuple[int, int]
    converged: bool
    iterations: int
    working_correlation: str
    n: int
    extra: dict = field(default_factory=dict)

    @property
    def estimate(self) -> np.ndarray:
        return self.coefficients

    def index(self, name: str) -> int:
        return self.names.index(name)

    def table(self) -> list[dict]:
        return [
            {
                "Variable": name,
                "Estimate": float(self.coefficients[j]),
                "95% LCL": float(self.lcl[j]),
                "95% UCL": float(self.ucl[j]),
                "SE": float(self.se[j]),
                "Hotelling t": float(self.hotelling[j]),
                "p": float(self.p_value[j]),
                "Working correlation": self.working_correlation,
            }
            for j, name in enumerate(self.names)
        ]

    def to_dict(self) -> dict:
        return {
            "working_correlation": self.working_correlation,
            "coefficients": self.table(),
            "rho": self.rho,
            "sigma2": self.sigma2,
            "df": list(self.df),
            "converged": self.converged,
            "iterations": self.iterations,
            "vcov": self.vcov.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        rows = self.table()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()


class _Clusters:
    """Row layout of the analysed (available) rows."""

    def __init__(self, pindex: np.ndarray, t: np.ndarray):
        self.n_rows = len(pindex)
        self.starts = np.flatnonzero(np.r_[True, pindex[1:] != pindex[:-1]]) if self.n_rows else np.array([], int)
        self.sizes = np.diff(np.r_[self.starts, self.n_rows])
        self.cluster_of_row = np.repeat(np.arange(len(self.starts)), self.sizes)
        same_next = np.r_[pindex[1:] == pindex[:-1], False]
        self.gap = np.where(same_next, np.r_[np.diff(t), 0], 0)   # t_{k+1} - t_k, 0 at cluster end
        self.has_next = same_next

    def sums(self, M: np.ndarray) -> np.ndarray:
        return np.add.reduceat(M, self.starts, axis=0)


def _apply_rinv(M: np.ndarray, structure: str, rho: float, cl: _Clusters) -> np.ndarray:
    """Blockwise ``R_i(rho)^{-1} M_i`` for row-stacked ``M`` (1-D or 2-D)."""
    if structure == INDEPENDENCE or rho == 0.0:
        return M.copy()
    vec = M.ndim == 1
    M2 = M[:, None] if vec else M
    if structure == EXCHANGEABLE:
        c = rho / (1.0 + (cl.sizes - 1) * rho)
        tot = cl.sums(M2)
        out = (M2 - (c[:, None] * tot)[cl.cluster_of_row]) / (1.0 - rho)
    else:
        phi = np.where(cl.has_next, rho ** cl.gap.astype(float), 0.0)
        a = 1.0 / (1.0 - phi ** 2)
        a_prev = np.r_[1.0, a[:-1]]
        a_prev[cl.starts] = 1.0
        diag = a_prev + a - 1.0
        off = -phi * a                       # links row k and k+1
        out = diag[:, None] * M2
        nxt = np.zeros_like(M2)
        nxt[:-1] = M2[1:]
        prv = np.zeros_like(M2)
        prv[1:] = M2[:-1]
        off_prev = np.r_[0.0, off[:-1]]
        out += off[:, None] * nxt + off_prev[:, None] * prv
    return out[:, 0] if vec else out


def _estimate_rho(e: np.ndarray, structure: str, cl: _Clusters) -> float:
    if structure == EXCHANGEABLE:
        s = cl.sums(e)
        ss = cl.sums(e ** 2)
        pairs = float(np.sum(cl.sizes * (cl.sizes - 1) / 2))
        if pairs == 0:
            return 0.0
        rho = float(np.sum((s ** 2 - ss) / 2) / pairs)
        lower = -1.0 / (cl.sizes.max() - 1) + 1e-3 if cl.sizes.max() > 1 else -RHO_CLAMP
        return float(np.clip(rho, max(-RHO_CLAMP, lower), RHO_CLAMP))
    if structure == AR1:
        adj = cl.has_next & (cl.gap == 1)
        if not adj.any():
            return 0.0
        idx = np.flatnonzero(adj)
        rho = float(np.mean(e[idx] * e[idx + 1]))
        return float(np.clip(rho, -RHO_CLAMP, RHO_CLAMP))
    return 0.0


def gee_design(dataset: MrtDataset, spec: GeeSpec):
    """Regressors ``[1, X, A, A X_int]`` on available rows."""
    arm = spec.arm or dataset.arms[0]
    if arm not in dataset.arms:
        raise SpecViolation(f"arm {arm!r} not in dataset")
    avail = dataset.available == 1
    A = (dataset.arm == arm).astype(float)

    def term(t):
        out = np.ones(len(dataset))
        for name in t:
            out = out * dataset.column(name)
        return out

    cols = [np.ones(len(dataset))] + [term(t) for t in spec.covariates]
    cols += [A] + [A * term(t) for t in spec.interactions]
    names = [INTERCEPT] + [term_name(t) for t in spec.covariates]
    names += [arm] + [f"{arm}:{term_name(t)}" for t in spec.interactions]
    X = np.column_stack(cols)[avail]
    y = dataset.outcome[avail]
    return X, y, tuple(names), dataset.participant_index[avail], dataset.t[avail]


def gee_fit(dataset: MrtDataset, spec: GeeSpec, *, level: float = 0.95) -> GeeResult:
    """Alternate GLS coefficient updates with moment estimates of rho and sigma^2."""
    X, y, names, pidx, t = gee_design(dataset, spec)
    if len(y) == 0:
        raise InputError("no available rows")
    cl = _Clusters(pidx, t)
    N, q = X.shape
    ols = solve_wls(X, y, np.ones(N), names)
    beta = ols.theta
    structure = spec.working_correlation
    rho = 0.0
    converged = structure == INDEPENDENCE
    iterations = 1
    if structure != INDEPENDENCE:
        converged = False
        for iterations in range(1, spec.max_iter + 1):
            r = y - X @ beta
            sigma2 = float(r @ r) / max(N - q, 1)
            rho = _estimate_rho(r / np.sqrt(sigma2), structure, cl) if sigma2 > 0 else 0.0
            RX = _apply_rinv(X, structure, rho, cl)
            B = X.T @ RX
            try:
                new = np.linalg.solve(B, RX.T @ y)
            except np.linalg.LinAlgError:
                raise RankDeficient(list(names)) from None
            step = float(np.max(np.abs(new - beta)))
            beta = new
            if step < spec.tol:
                converged = True
                break
        if not converged:
            raise NotConverged(iterations)

    r = y - X @ beta
    sigma2 = float(r @ r) / max(N - q, 1)
    RX = _apply_rinv(X, structure, rho, cl)
    B = X.T @ RX
    Binv = np.linalg.inv(B)
    Rr = _apply_rinv(r, structure, rho, cl)
    U = cluster_scores(X, np.ones(N), Rr, cl.starts)
    V = Binv @ (U.T @ U) @ Binv
    V = 0.5 * (V + V.T)
    se = np.sqrt(np.clip(np.diag(V), 0.0, None))
    n = len(cl.starts)
    df2 = n - q
    if df2 > 0 and np.all(se > 0):
        stat, p, lcl, ucl = inference(beta, se, df2, level)
    else:
        stat = p = lcl = ucl = np.full(q, np.nan)
    return GeeResult(
        names=names, coefficients=beta, rho=rho, sigma2=sigma2, vcov=V, se=se,
        hotelling=stat, p_value=p, lcl=lcl, ucl=ucl, df=(1, df2), converged=converged,
        iterations=iterations, working_correlation=structure, n=n,
    )


def working_covariance(result: GeeResult, m: int = 2) -> np.ndarray:
    """``sigma^2 R(rho)`` for ``m`` consecutive decision points."""
    k = np.arange(m)
    if result.working_correlation == INDEPENDENCE:
        R = np.eye(m)
    elif result.working_correlation == EXCHANGEABLE:
        R = np.full((m, m), result.rho)
        np.fill_diagonal(R, 1.0)
    else:
        R = result.rho ** np.abs(k[:, None] - k[None, :])
    return result.sigma2 * R


def bias_decomposition_terms(dataset: MrtDataset, coefficients, V, covariate: str,
                             arm: str | None = None) -> np.ndarray:
    """Per-participant off-diagonal parts of the two-period GEE score.

    Rows are participants; columns are the intercept, covariate, treatment
    and treatment-by-covariate components.  ``coefficients`` are
    ``(a0, a1, b0, b1)`` of ``a0 + a1 X + A (b0 + b1 X)``.
    """
    arm = arm or dataset.arms[0]
    if len(dataset.arms) != 1 or arm not in dataset.arms:
        raise ShapeError("bias decomposition needs a single-arm dataset")
    sizes = np.diff(np.r_[dataset.starts, len(dataset)])
    if np.any(sizes != 2):
        raise ShapeError("bias decomposition needs exactly two decision points per participant")
    V = np.asarray(V, dtype=float)
    if V.shape != (2, 2):
        raise ShapeError("V must be 2 x 2")
    Winv = np.linalg.inv(V)
    w12, w21 = Winv[0, 1], Winv[1, 0]
    a0, a1, b0, b1 = np.asarray(coefficients, dtype=float)
    X = dataset.column(covariate).reshape(-1, 2)
    A = (dataset.arm == arm).astype(float).reshape(-1, 2)
    Y = dataset.outcome.reshape(-1, 2)
    r = Y - a0 - a1 * X - A * (b0 + b1 * X)
    X1, X2, A1, A2, r1, r2 = X[:, 0], X[:, 1], A[:, 0], A[:, 1], r[:, 0], r[:, 1]
    return np.column_stack([
        np.zeros(len(r1)),
        w21 * X2 * r1 + w12 * X1 * r2,
        w21 * A2 * r1 + w12 * A1 * r2,
        w21 * A2 * X2 * r1 + w12 * A1 * X1 * r2,
    ])


def bias_decomposition(dataset: MrtDataset, coefficients, V, covariate: str,
                       arm: str | None = None) -> np.ndarray:
    """Sample average of :func:`bias_decomposition_terms`.

    The first entry is identically zero; the others vanish in expectation
    when the covariate is exogenous or ``V`` is diagonal.
    """
    return bias_decomposition_terms(dataset, coefficients, V, covariate, arm).mean(axis=0)


__all__ = [
    "AR1", "EXCHANGEABLE", "GeeResult", "GeeSpec", "INDEPENDENCE", "bias_decomposition",
    "bias_decomposition_terms", "gee_design", "gee_fit", "working_covariance",
]
