"""Local quadratic smoothing of the excursion effect over study days.

``loess_fit`` is a plain tricube-weighted local polynomial smoother.
``effect_over_time`` applies the same windowing to WCLS itself: at each grid
day the rows are re-weighted by the tricube kernel in distance from that
day and a WCLS fit with an intercept-plus-quadratic moderator in centered
day is solved; the effect at the grid day is that fit's effect intercept.
A linear-in-day WCLS fit with a pointwise band serves as the comparator.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .dataset import MrtDataset
from .design import ModelSpec, build_design, parse_term
from .errors import InputError, NumericalError, SpecViolation, UnknownColumn, WindowRankDeficient
from .estimator import fit_design, solve_wls

DEFAULT_SPAN = 2.0 / 3.0
DEFAULT_GRID = tuple(float(d) for d in range(42))


@dataclass(frozen=True)
class LoessSpec:
    span: float = DEFAULT_SPAN
    degree: int = 2
    grid: tuple[float, ...] = DEFAULT_GRID
    variable: str = "day"

    def __post_init__(self):
        if not (0.0 < float(self.span) <= 1.0):
            raise InputError(f"span must be in (0, 1], got {self.span!r}")
        if int(self.degree) != self.degree or self.degree < 0:
            raise InputError(f"degree must be a non-negative integer, got {self.degree!r}")
        grid = np.asarray(self.grid, dtype=float).ravel()
        if grid.size == 0 or not np.all(np.isfinite(grid)):
            raise InputError("grid must be a non-empty list of finite numbers")
        object.__setattr__(self, "span", float(self.span))
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "grid", tuple(float(g) for g in np.unique(grid)))

    def to_dict(self) -> dict:
        return {"span": self.span, "degree": self.degree, "grid": list(self.grid),
                "variable": self.variable}

    @classmethod
    def from_dict(cls, d) -> "LoessSpec":
        extra = set(d) - {"span", "degree", "grid", "variable"}
        if extra:
            raise InputError(f"unknown loess keys: {sorted(extra)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EffectCurve:
    """Smoothed curve on a grid, optionally with a linear comparator and its band."""

    grid: np.ndarray
    estimate: np.ndarray
    comparator_estimate: np.ndarray | None = None
    lcl: np.ndarray | None = None
    ucl: np.ndarray | None = None
    comparator_se: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.grid)

    def to_csv(self, round_to: int | None = None) -> str:
        n = len(self.grid)
        nan = np.full(n, np.nan)
        cols = [self.estimate,
                nan if self.lcl is None else self.lcl,
                nan if self.ucl is None else self.ucl,
                nan if self.comparator_estimate is None else self.comparator_estimate]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["day", "estimate", "lcl", "ucl", "comparator_estimate"])
        for k in range(n):
            w.writerow([_fmt(self.grid[k], None)] + [_fmt(c[k], round_to) for c in cols])
        return buf.getvalue()

    def to_dict(self) -> dict:
        def lst(a):
            return None if a is None else [float(v) for v in a]

        return {"day": lst(self.grid), "estimate": lst(self.estimate), "lcl": lst(self.lcl),
                "ucl": lst(self.ucl), "comparator_estimate": lst(self.comparator_estimate),
                "comparator_se": lst(self.comparator_se), "meta": dict(self.meta)}


def _fmt(v, round_to):
    v = float(v)
    if not math.isfinite(v):
        return ""
    if round_to is None:
        return repr(v)
    return f"{v:.{round_to}f}"


def tricube(u) -> np.ndarray:
    """``(1 - |u|^3)^3`` on ``|u| < 1``, zero elsewhere."""
    u = np.abs(np.asarray(u, dtype=float))
    return np.where(u < 1.0, (1.0 - u ** 3) ** 3, 0.0)


def window_weights(x: np.ndarray, g: float, span: float) -> tuple[np.ndarray, float]:
    """Tricube weights for the ``ceil(span * N)`` points nearest ``g``.

    Points tied with the farthest selected one are included; they sit on the
    window boundary and get weight zero.  Returns ``(weights, d_max)``.
    """
    d = np.abs(x - g)
    k = max(1, math.ceil(span * len(x) - 1e-12))
    dmax = float(np.partition(d, k - 1)[k - 1])
    if dmax <= 0.0:
        return np.where(d == 0.0, 1.0, 0.0), 0.0
    return tricube(d / dmax), dmax


def loess_fit(x, y, w_base=None, spec: LoessSpec | None = None) -> EffectCurve:
    """Local polynomial fit of ``y`` on ``x`` evaluated at ``spec.grid``."""
    spec = spec or LoessSpec()
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    w_base = np.ones_like(x) if w_base is None else np.asarray(w_base, dtype=float).ravel()
    if not (x.shape == y.shape == w_base.shape):
        raise InputError("x, y and w_base must have equal lengths")
    if x.size == 0:
        raise InputError("no data to smooth")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w_base))):
        raise InputError("x, y and w_base must be finite")
    if np.any(w_base < 0):
        raise InputError("base weights must be non-negative")
    if spec.span * len(np.unique(x)) < spec.degree + 1:
        raise InputError("span times the number of distinct abscissae is below degree + 1")
    est = np.empty(len(spec.grid))
    for j, g in enumerate(spec.grid):
        est[j] = _local_poly(x, y, w_base, g, spec)
    return EffectCurve(grid=np.asarray(spec.grid), estimate=est,
                       meta={"span": spec.span, "degree": spec.degree})


def _local_poly(x, y, w_base, g, spec) -> float:
    kern, dmax = window_weights(x, g, spec.span)
    w = kern * w_base
    inside = w > 0
    if dmax == 0.0 or len(np.unique(x[inside])) < spec.degree + 1:
        raise WindowRankDeficient(g)
    u = (x - g) / dmax
    X = np.vander(u, spec.degree + 1, increasing=True)
    try:
        return float(solve_wls(X, y, w).theta[0])
    except NumericalError:
        raise WindowRankDeficient(g) from None


def _local_spec(spec: ModelSpec, arm: str, powers: list[str], var: str) -> ModelSpec:
    # the centered powers span the day control, so it is dropped unless another arm needs it
    others = {t for a in spec.arms if a != arm for t in spec.moderators[a]}
    controls = [t for t in spec.controls if t != (var,) or t in others]
    for c in powers:
        if parse_term(c) not in controls:
            controls.append(parse_term(c))
    return ModelSpec(arms=spec.arms, controls=controls,
                     moderators={a: (list(powers) if a == arm else list(spec.moderators[a]))
                                 for a in spec.arms},
                     numerator=spec.numerator, arm_groups=spec.arm_groups, labels=spec.labels)


def effect_over_time(dataset: MrtDataset, spec: ModelSpec, loess: LoessSpec | None = None,
                     *, arm: str | None = None, level: float = 0.95) -> EffectCurve:
    """Kernel-localized WCLS effect curve plus the linear-in-day comparator.

    ``spec`` supplies the arms, working-model controls and numerator policy;
    its moderators for ``arm`` must include the day variable, and the
    comparator refits ``spec`` with moderators ``(1, day)`` for that arm.
    """
    loess = loess or LoessSpec()
    var = loess.variable
    if not dataset.has_column(var):
        raise UnknownColumn(var)
    arm = arm or spec.arms[0]
    if arm not in spec.arms:
        raise SpecViolation(f"arm {arm!r} not in spec")
    if (var,) not in spec.moderators[arm]:
        raise SpecViolation(f"moderators of {arm!r} must include {var!r}")
    day = dataset.column(var)

    # linear comparator
    comp_spec = replace(spec, moderators={a: ([var] if a == arm else list(spec.moderators[a]))
                                          for a in spec.arms})
    comp = fit_design(build_design(dataset, comp_spec), level=level)
    b = comp.beta_slices[arm]
    coef = comp.estimate[b]
    V = comp.vcov_corrected[b, b]
    grid = np.asarray(loess.grid)
    G = np.column_stack([np.ones_like(grid), grid])
    lin = G @ coef
    lin_se = np.sqrt(np.clip(np.einsum("ij,jk,ik->i", G, V, G), 0.0, None))
    crit = stats.t.ppf(0.5 + level / 2, comp.df[1]) if comp.df[1] > 0 else np.nan
    lcl, ucl = lin - crit * lin_se, lin + crit * lin_se

    # kernel-localized WCLS
    avail = dataset.available == 1
    x_av = day[avail]
    if loess.span * len(np.unique(x_av)) < loess.degree + 1:
        raise InputError("span times the number of distinct days is below degree + 1")
    powers = [f"__day_c{k}" for k in range(1, loess.degree + 1)]
    local_spec = _local_spec(spec, arm, powers, var)
    local = np.empty(len(grid))
    for j, g in enumerate(grid):
        kern_av, dmax = window_weights(x_av, g, loess.span)
        if dmax == 0.0 or len(np.unique(x_av[kern_av > 0])) < loess.degree + 1:
            raise WindowRankDeficient(float(g))
        u = (day - g) / dmax
        ds = dataset
        for k, name in enumerate(powers, start=1):
            ds = ds.with_covariate(name, u ** k)
        design = build_design(ds, local_spec)
        kern = np.zeros(len(day))
        kern[avail] = kern_av
        try:
            sol = solve_wls(design.X, design.y, design.weight * kern, design.names)
        except NumericalError:
            raise WindowRankDeficient(float(g)) from None
        local[j] = sol.theta[design.beta_slices[arm].start]
    return EffectCurve(grid=grid, estimate=local, comparator_estimate=lin, lcl=lcl, ucl=ucl,
                       comparator_se=lin_se,
                       meta={"arm": arm, "span": loess.span, "degree": loess.degree,
                             "comparator_coefficients": [float(c) for c in coef]})


__all__ = ["DEFAULT_GRID", "DEFAULT_SPAN", "EffectCurve", "LoessSpec", "effect_over_time",
           "loess_fit", "tricube", "window_weights"]
