"""Weighted and centered least squares (WCLS) with robust inference.

The estimating equation is linear in the parameters, so it is solved
directly as weighted least squares on the centered design (pivoted QR).  The
covariance is the participant-clustered sandwich; the small-sample version
inflates each participant's residuals by ``(I - H_i)^{-1}`` before forming
the meat, and tests use an ``F(1, n - q)`` reference.
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .dataset import MrtDataset
from .design import Design, ModelSpec, build_design
from .errors import (
    InputError,
    LeverageSingular,
    NoAvailableRows,
    NonFiniteWeights,
    NumericalError,
    RankDeficient,
    SingularBread,
)
from .kernels import cluster_grams, cluster_scores

RANK_RTOL = 1e-10
BREAD_COND_MAX = 1e12
LEVERAGE_COND_MAX = 1e12
EE_RTOL = 1e-8

WORKING_MODEL_NOTE = "working model - do not interpret"


@dataclass(frozen=True)
class WeightedSolve:
    theta: np.ndarray
    bread: np.ndarray        # X^T W X
    bread_inv: np.ndarray
    resid: np.ndarray        # y - X theta on every row
    ee_norm: float
    ee_scale: float
    bread_cond: float


def solve_wls(X, y, weight, names=None) -> WeightedSolve:
    """Solve ``sum_rows weight * (y - X theta) X = 0`` by pivoted QR.

    Rows with zero weight are ignored.  Raises :class:`RankDeficient` naming
    the columns that pivoting pushed past the numerical rank.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    weight = np.asarray(weight, dtype=float)
    q = X.shape[1]
    names = list(names) if names is not None else [f"x{j}" for j in range(q)]
    if not np.all(np.isfinite(weight)):
        raise NonFiniteWeights("weights must be finite")
    if np.any(weight < 0):
        raise NonFiniteWeights("weights must be non-negative")
    use = weight > 0
    if not use.any():
        raise NoAvailableRows("no rows with positive weight")
    sw = np.sqrt(weight[use])
    Xw = X[use] * sw[:, None]
    yw = y[use] * sw
    if not (np.all(np.isfinite(Xw)) and np.all(np.isfinite(yw))):
        raise NumericalError("non-finite values in design or outcome")
    if Xw.shape[0] < q:
        raise RankDeficient(names[Xw.shape[0]:])

    Q, R, piv = linalg.qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_RTOL * diag[0])) if diag[0] > 0 else 0
    if rank < q:
        raise RankDeficient([names[j] for j in piv[rank:]])
    coef_p = linalg.solve_triangular(R, Q.T @ yw)
    theta = np.empty(q)
    theta[piv] = coef_p

    Rinv = linalg.solve_triangular(R, np.eye(q))
    inv_p = Rinv @ Rinv.T
    bread_inv = np.empty((q, q))
    bread_inv[np.ix_(piv, piv)] = inv_p
    bread_inv = 0.5 * (bread_inv + bread_inv.T)
    sv = linalg.svdvals(R)
    bread_cond = float((sv[0] / sv[-1]) ** 2)
    if bread_cond > BREAD_COND_MAX:
        raise SingularBread(f"condition number of the bread {bread_cond:.3g} exceeds {BREAD_COND_MAX:g}")
    bread = Xw.T @ Xw

    resid = y - X @ theta
    ee = X[use].T @ (weight[use] * resid[use])
    ee_norm = float(np.linalg.norm(ee))
    ee_scale = float(np.linalg.norm(np.abs(X[use]).T @ (weight[use] * np.abs(y[use]))))
    if ee_norm > EE_RTOL * (1.0 + ee_scale):
        raise NumericalError(f"estimating equation residual {ee_norm:.3g} too large")
    return WeightedSolve(theta, bread, bread_inv, resid, ee_norm, ee_scale, bread_cond)


def sandwich_vcov(X, weight, resid, starts, bread_inv=None) -> np.ndarray:
    """Participant-clustered sandwich ``B^{-1} (sum_i U_i U_i^T) B^{-1}``.

    ``B = X^T W X`` and ``U_i`` is participant ``i``'s weighted score.  This
    equals ``M_n^{-1} Sigma_n M_n^{-T} / n`` with participant averages.
    """
    X = np.asarray(X, dtype=float)
    weight = np.asarray(weight, dtype=float)
    resid = np.where(weight > 0, np.asarray(resid, dtype=float), 0.0)
    if bread_inv is None:
        bread_inv = _bread_inverse(X, weight)
    U = cluster_scores(X, weight, resid, starts)
    meat = U.T @ U
    V = bread_inv @ meat @ bread_inv
    return 0.5 * (V + V.T)


def participant_leverages(X, weight, starts, bread_inv) -> np.ndarray:
    """``L_i = G_i B^{-1}`` for each participant, shape ``(n, q, q)``.

    ``L_i`` shares its non-zero eigenvalues with the row-level leverage block
    ``H_i = X_i B^{-1} X_i^T W_i``.
    """
    G = cluster_grams(X, weight, starts)
    return G @ bread_inv


def small_sample_correct(scores, leverages, bread_inv) -> np.ndarray:
    """Sandwich with residuals inflated by ``(I - H_i)^{-1}``.

    Works in parameter space: ``X_i^T W_i (I - H_i)^{-1} r_i`` equals
    ``(I - L_i)^{-1} U_i`` with ``L_i = G_i B^{-1}``.  With zero leverages
    the result is the uncorrected sandwich.
    """
    scores = np.asarray(scores, dtype=float)
    leverages = np.asarray(leverages, dtype=float)
    n, q = scores.shape
    if n == 0:
        return np.zeros((q, q))
    IminusL = np.eye(q)[None, :, :] - leverages
    cond = np.linalg.cond(IminusL)
    bad = np.flatnonzero(~np.isfinite(cond) | (cond > LEVERAGE_COND_MAX))
    if bad.size:
        raise LeverageSingular(f"I - H_i is numerically singular for participant {int(bad[0])}")
    adj = np.linalg.solve(IminusL, scores[:, :, None])[:, :, 0]
    V = bread_inv @ (adj.T @ adj) @ bread_inv
    return 0.5 * (V + V.T)


def _bread_inverse(X, weight):
    B = X.T @ (X * weight[:, None])
    cond = np.linalg.cond(B)
    if not np.isfinite(cond) or cond > BREAD_COND_MAX:
        raise SingularBread(f"condition number of the bread {cond:.3g} exceeds {BREAD_COND_MAX:g}")
    return np.linalg.inv(B)


def inference(estimate, se, df2, level: float = 0.95):
    """Hotelling statistic, p-value and confidence limits per coefficient.

    statistic = (estimate/se)^2, referred to ``F(1, df2)``; limits are
    ``estimate -/+ t_{df2, (1+level)/2} * se``.
    """
    estimate = np.asarray(estimate, dtype=float)
    se = np.asarray(se, dtype=float)
    if np.any(~(se > 0)):
        raise InputError("standard errors must be positive")
    if not df2 > 0:
        raise InputError(f"residual degrees of freedom must be positive, got {df2}")
    stat = (estimate / se) ** 2
    p = stats.f.sf(stat, 1, df2)
    crit = stats.t.ppf(0.5 + level / 2, df2)
    return stat, p, estimate - crit * se, estimate + crit * se


@dataclass(frozen=True, eq=False)
class FitResult:
    names: tuple[str, ...]
    estimate: np.ndarray
    n_alpha: int
    beta_slices: Mapping[str, slice]
    vcov: np.ndarray
    vcov_corrected: np.ndarray
    se: np.ndarray
    se_uncorrected: np.ndarray
    hotelling: np.ndarray
    df: tuple[int, int]
    p_value: np.ndarray
    lcl: np.ndarray
    ucl: np.ndarray
    n: int
    diagnostics: Mapping[str, float] = field(default_factory=dict)
    labels: Mapping[str, str] = field(default_factory=dict)
    level: float = 0.95

    @property
    def q(self) -> int:
        return len(self.names)

    @property
    def alpha_hat(self) -> np.ndarray:
        return self.estimate[: self.n_alpha]

    @property
    def beta_hat(self) -> dict[str, np.ndarray]:
        return {a: self.estimate[s] for a, s in self.beta_slices.items()}

    @property
    def beta(self) -> np.ndarray:
        """All effect coefficients concatenated in arm order."""
        return self.estimate[self.n_alpha:]

    @property
    def ci(self) -> np.ndarray:
        return np.column_stack([self.lcl, self.ucl])

    def index(self, name: str) -> int:
        return self.names.index(name)

    def table(self) -> list[dict]:
        """Coefficient rows: Variable, Symbol, Estimate, 95% LCL, 95% UCL, SE,
        Hotelling t, p, then the term name and its role."""
        pct = f"{round(self.level * 100):d}%"
        rows = []
        for j, name in enumerate(self.names):
            control = j < self.n_alpha
            rows.append({
                "Variable": self.labels.get(name, name),
                "Symbol": f"alpha_{j}" if control else f"beta_{j - self.n_alpha}",
                "Estimate": float(self.estimate[j]),
                f"{pct} LCL": float(self.lcl[j]),
                f"{pct} UCL": float(self.ucl[j]),
                "SE": float(self.se[j]),
                "Hotelling t": float(self.hotelling[j]),
                "p": float(self.p_value[j]),
                "Term": name,
                "Role": "control" if control else "effect",
                "Note": WORKING_MODEL_NOTE if control else "",
            })
        return rows

    def to_dict(self, round_to: int | None = None) -> dict:
        def r(x):
            return x if round_to is None else round(x, round_to)

        table = [{k: (r(v) if isinstance(v, float) else v) for k, v in row.items()} for row in self.table()]
        return {
            "coefficients": table,
            "df": list(self.df),
            "n": self.n,
            "q": self.q,
            "vcov": self.vcov.tolist(),
            "vcov_corrected": self.vcov_corrected.tolist(),
            "diagnostics": dict(self.diagnostics),
            "note": f"control coefficients belong to the working model ({WORKING_MODEL_NOTE})",
        }

    def to_json(self, round_to: int | None = None) -> str:
        return json.dumps(self.to_dict(round_to), indent=2)

    def to_csv(self, round_to: int | None = None) -> str:
        rows = self.table()
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (_fmt(v, round_to) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def _fmt(x: float, round_to: int | None) -> str:
    if round_to is None:
        return repr(x)
    return f"{x:.{round_to}f}"


def fit_design(design: Design, *, labels: Mapping[str, str] | None = None,
               level: float = 0.95) -> FitResult:
    """WCLS point estimate and inference for a prebuilt design."""
    if not np.any(design.weight > 0):
        raise NoAvailableRows("no available rows")
    sol = solve_wls(design.X, design.y, design.weight, design.names)
    q = design.q
    df2 = design.n - q
    resid = np.where(design.weight > 0, sol.resid, 0.0)
    U = cluster_scores(design.X, design.weight, resid, design.starts)
    V = sol.bread_inv @ (U.T @ U) @ sol.bread_inv
    V = 0.5 * (V + V.T)
    se_u = np.sqrt(np.clip(np.diag(V), 0.0, None))
    L = participant_leverages(design.X, design.weight, design.starts, sol.bread_inv)
    Vc = None
    if df2 <= 0:
        warnings.warn(f"n={design.n} participants for q={q} parameters: no residual degrees "
                      "of freedom, inference is not available", RuntimeWarning, stacklevel=2)
    else:
        try:
            Vc = small_sample_correct(U, L, sol.bread_inv)
        except LeverageSingular as err:
            warnings.warn(f"{err}; corrected inference is not available", RuntimeWarning,
                          stacklevel=2)
    if Vc is None:
        nan = np.full(q, np.nan)
        Vc, se, stat, p, lcl, ucl = np.full((q, q), np.nan), nan, nan, nan, nan, nan
    else:
        se = np.sqrt(np.clip(np.diag(Vc), 0.0, None))
        if np.all(se > 0):
            stat, p, lcl, ucl = inference(sol.theta, se, df2, level)
        else:
            # exact fit: zero-width intervals, tests undefined where se == 0
            safe = np.where(se > 0, se, 1.0)
            stat = np.where(se > 0, (sol.theta / safe) ** 2, np.nan)
            p = np.where(se > 0, stats.f.sf(stat, 1, df2), np.nan)
            crit = stats.t.ppf(0.5 + level / 2, df2)
            lcl, ucl = sol.theta - crit * se, sol.theta + crit * se
    diagnostics = {
        "ee_residual_norm": sol.ee_norm,
        "ee_scale": sol.ee_scale,
        "bread_condition": sol.bread_cond,
        "rows": int(len(design.y)),
        "available_rows": int(np.sum(design.avail)),
        "max_leverage": float(np.max(np.abs(np.linalg.eigvals(L)))) if len(L) else 0.0,
    }
    return FitResult(
        names=design.names, estimate=sol.theta, n_alpha=design.n_alpha,
        beta_slices=dict(design.beta_slices), vcov=V, vcov_corrected=Vc, se=se,
        se_uncorrected=se_u, hotelling=stat, df=(1, df2), p_value=p, lcl=lcl, ucl=ucl,
        n=design.n, diagnostics=diagnostics, labels=dict(labels or {}), level=level,
    )


def wcls_fit(dataset: MrtDataset, spec: ModelSpec, *, level: float = 0.95) -> FitResult:
    """Fit the linear excursion-effect model declared by ``spec``."""
    return fit_design(build_design(dataset, spec), labels=spec.labels, level=level)


__all__ = [
    "FitResult", "WeightedSolve", "fit_design", "inference", "participant_leverages",
    "sandwich_vcov", "small_sample_correct", "solve_wls", "wcls_fit",
]
