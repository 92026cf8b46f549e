"""Monte Carlo harness: repeated generate-and-fit cycles with paired estimators.

Every estimator sees the same simulated dataset within a replication, so
differences between estimators (for instance in their spread) can be judged
with paired standard errors.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .design import ModelSpec
from .errors import InputError, MrtError, ReplicationError
from .estimator import wcls_fit
from .gee import GeeSpec, gee_fit
from .simulate import SimScenario, generate


@dataclass(frozen=True)
class EstimatorSpec:
    """A named estimator: a WCLS ``ModelSpec`` or a ``GeeSpec``.

    ``targets`` lists the coefficient names to score; by default all effect
    coefficients.
    """

    name: str
    model: ModelSpec | GeeSpec
    targets: tuple[str, ...] | None = None

    def __post_init__(self):
        if not isinstance(self.model, (ModelSpec, GeeSpec)):
            raise InputError(f"estimator {self.name!r}: model must be a ModelSpec or GeeSpec")
        if self.targets is not None:
            object.__setattr__(self, "targets", tuple(self.targets))

    def fit(self, dataset):
        if isinstance(self.model, GeeSpec):
            return gee_fit(dataset, self.model)
        return wcls_fit(dataset, self.model)

    def default_targets(self, result) -> tuple[str, ...]:
        if isinstance(self.model, GeeSpec):
            return tuple(result.names[1 + len(self.model.covariates):])
        return tuple(result.names[result.n_alpha:])

    def to_dict(self) -> dict:
        kind = "gee" if isinstance(self.model, GeeSpec) else "wcls"
        return {"name": self.name, "type": kind, "model": self.model.to_dict(),
                "targets": None if self.targets is None else list(self.targets)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "EstimatorSpec":
        kind = d.get("type", "wcls")
        if kind == "gee":
            model = GeeSpec.from_dict(d["model"])
        elif kind == "wcls":
            model = ModelSpec.from_dict(d["model"])
        else:
            raise InputError(f"unknown estimator type {kind!r}")
        return cls(name=d["name"], model=model, targets=d.get("targets"))


@dataclass
class McRow:
    estimator: str
    coefficient: str
    truth: float
    reps: int
    n_ok: int
    mean: float
    bias: float
    sd: float
    coverage: float
    bias_se: float
    sd_se: float
    coverage_se: float
    mean_se_estimate: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


CSV_COLUMNS = (
    "estimator", "coefficient", "truth", "bias", "standard deviation", "95% coverage probability",
    "bias MC SE", "standard deviation MC SE", "coverage MC SE", "mean SE", "replications",
    "successful",
)


@dataclass
class McReport:
    """Per-estimator, per-coefficient bias, SD and coverage across replications.

    ``estimates`` and ``covered`` keep the per-replication values (rows are
    replications, NaN where a fit failed) for paired comparisons.
    """

    scenario: SimScenario
    reps: int
    rows: list[McRow]
    estimates: dict[str, np.ndarray] = field(repr=False)
    covered: dict[str, np.ndarray] = field(repr=False)
    ses: dict[str, np.ndarray] = field(repr=False)
    targets: dict[str, tuple[str, ...]] = field(default_factory=dict)
    failures: list[dict] = field(default_factory=list)

    def row(self, estimator: str, coefficient: str | None = None) -> McRow:
        for r in self.rows:
            if r.estimator == estimator and (coefficient is None or r.coefficient == coefficient):
                return r
        raise KeyError((estimator, coefficient))

    def sd_gap(self, a: str, b: str, coefficient: str | None = None) -> tuple[float, float]:
        """``SD_b - SD_a`` with its paired jackknife standard error."""
        xa = self._column(a, coefficient)
        xb = self._column(b, coefficient)
        ok = np.isfinite(xa) & np.isfinite(xb)
        return paired_sd_gap(xa[ok], xb[ok])

    def _column(self, estimator: str, coefficient: str | None) -> np.ndarray:
        names = self.targets[estimator]
        j = 0 if coefficient is None else names.index(coefficient)
        return self.estimates[estimator][:, j]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "reps": self.reps,
            "rows": [r.as_dict() for r in self.rows],
            "failures": list(self.failures),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, default=_json_default)

    def to_csv(self, round_to: int | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            nums = [r.truth, r.bias, r.sd, r.coverage, r.bias_se, r.sd_se, r.coverage_se,
                    r.mean_se_estimate]
            w.writerow([r.estimator, r.coefficient] + [_fmt(v, round_to) for v in nums]
                       + [r.reps, r.n_ok])
        return buf.getvalue()


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


def _fmt(v: float, round_to: int | None) -> str:
    if round_to is None or not math.isfinite(v):
        return repr(float(v))
    return f"{v:.{round_to}f}"


def paired_sd_gap(xa: np.ndarray, xb: np.ndarray) -> tuple[float, float]:
    """Difference of sample SDs ``sd(xb) - sd(xa)`` and its jackknife SE."""
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    R = len(xa)
    if R < 3:
        return float("nan"), float("nan")
    gap = float(np.std(xb, ddof=1) - np.std(xa, ddof=1))

    def loo_sd(x):
        s1, s2 = x.sum(), (x * x).sum()
        m = (s1 - x) / (R - 1)
        ss = (s2 - x * x) - (R - 1) * m * m
        return np.sqrt(np.clip(ss, 0.0, None) / (R - 2))

    d = loo_sd(xb) - loo_sd(xa)
    se = math.sqrt((R - 1) / R * float(np.sum((d - d.mean()) ** 2)))
    return gap, se


def _truth_for(truth, names: Sequence[str]) -> np.ndarray:
    if isinstance(truth, Mapping):
        missing = [n for n in names if n not in truth]
        if missing:
            raise InputError(f"no true value given for {missing}")
        return np.array([float(truth[n]) for n in names])
    arr = np.atleast_1d(np.asarray(truth, dtype=float))
    if arr.size == 1:
        return np.full(len(names), float(arr[0]))
    if arr.size != len(names):
        raise InputError(f"true value vector has {arr.size} entries, expected {len(names)}")
    return arr


def _one_rep(scenario: SimScenario, estimators: Sequence[EstimatorSpec], rep: int):
    data = generate(scenario, rep)
    out = []
    for spec in estimators:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = spec.fit(data)
            names = spec.targets or spec.default_targets(res)
            idx = [res.index(n) for n in names]
            out.append((names, res.estimate[idx], res.lcl[idx], res.ucl[idx], res.se[idx], None))
        except MrtError as e:
            out.append((None, None, None, None, None, e))
    return out


def _rep_block(args):
    scenario, estimators, reps = args
    return [(r, _one_rep(scenario, estimators, r)) for r in reps]


def run_mc(scenario: SimScenario, estimators: Sequence[EstimatorSpec], reps: int, truth,
           *, failure_budget: int = 0, workers: int = 1) -> McReport:
    """Run ``reps`` paired generate-fit cycles and summarize against ``truth``.

    ``truth`` is a mapping from coefficient name to true value, a vector
    aligned with each estimator's targets, or a scalar. Replication ``r``
    always uses stream ``(scenario.seed, r)``, so results do not depend on
    ``workers``.
    """
    if int(reps) != reps or reps < 1:
        raise InputError(f"reps must be a positive integer, got {reps!r}")
    if not estimators:
        raise InputError("at least one estimator is required")
    names_seen = [e.name for e in estimators]
    if len(set(names_seen)) != len(names_seen):
        raise InputError("estimator names must be unique")
    reps = int(reps)
    estimators = list(estimators)

    if workers > 1 and reps > 1:
        blocks = [list(range(s, reps, workers)) for s in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_rep_block, [(scenario, estimators, b) for b in blocks if b]))
        results = dict(item for part in parts for item in part)
    else:
        results = {r: _one_rep(scenario, estimators, r) for r in range(reps)}

    failures = []
    targets: dict[str, tuple[str, ...]] = {}
    for r in range(reps):
        for k, spec in enumerate(estimators):
            names, *_, err = results[r][k]
            if err is not None:
                failures.append({"rep": r, "estimator": spec.name, "error": f"{type(err).__name__}: {err}"})
                if len(failures) > failure_budget:
                    raise ReplicationError(r, spec.name, err) from err
            elif spec.name not in targets:
                targets[spec.name] = tuple(names)
    for spec in estimators:
        if spec.name not in targets:
            raise InputError(f"estimator {spec.name!r} failed in every replication")

    rows, est_all, cov_all, se_all = [], {}, {}, {}
    for k, spec in enumerate(estimators):
        names = targets[spec.name]
        theta = _truth_for(truth, names)
        est = np.full((reps, len(names)), np.nan)
        lcl = np.full_like(est, np.nan)
        ucl = np.full_like(est, np.nan)
        se = np.full_like(est, np.nan)
        for r in range(reps):
            _, e, lo, hi, s, err = results[r][k]
            if err is None:
                est[r], lcl[r], ucl[r], se[r] = e, lo, hi, s
        covered = np.where(np.isfinite(est[:, :1]), ((lcl <= theta) & (theta <= ucl)).astype(float), np.nan)
        est_all[spec.name], cov_all[spec.name], se_all[spec.name] = est, covered, se
        for j, name in enumerate(names):
            x = est[:, j][np.isfinite(est[:, j])]
            c = covered[:, j][np.isfinite(covered[:, j])]
            m = len(x)
            mean = float(x.mean())
            sd = float(np.std(x, ddof=1)) if m > 1 else float("nan")
            cov = float(c.mean())
            rows.append(McRow(
                estimator=spec.name, coefficient=name, truth=float(theta[j]), reps=reps, n_ok=m,
                mean=mean, bias=mean - float(theta[j]), sd=sd, coverage=cov,
                bias_se=sd / math.sqrt(m) if m > 1 else float("nan"),
                sd_se=sd / math.sqrt(2 * (m - 1)) if m > 1 else float("nan"),
                coverage_se=math.sqrt(cov * (1 - cov) / m),
                mean_se_estimate=float(np.nanmean(se[:, j])),
            ))
    return McReport(scenario=scenario, reps=reps, rows=rows, estimates=est_all, covered=cov_all,
                    ses=se_all, targets=targets, failures=failures)


__all__ = ["CSV_COLUMNS", "EstimatorSpec", "McReport", "McRow", "paired_sd_gap", "run_mc"]
