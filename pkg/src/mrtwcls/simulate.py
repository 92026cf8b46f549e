"""Synthetic micro-randomized trials.

Four generative scenarios:

``appendix_c``
    Always-available trial, ``A ~ Bernoulli(0.6)``, covariate ``x`` drawn
    independently each decision point and an outcome that is linear in
    ``x``, the previous outcome and the centered treatment.
``endogenous_two_period``
    Two decision points whose second covariate equals the first outcome,
    with correlated residuals across the two outcomes.
``availability_marginal``
    Availability probability and treatment effect both vary over the study;
    the randomization probability may depend on the current covariate.
``multi_arm``
    Two active arms plus control with location-moderated effects and the
    columns used by the example analysis specs (prior steps, day, location,
    planning).

Every replication draws from its own stream, a pure function of
``(seed, rep)``.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .dataset import CONTROL, MrtDataset
from .errors import InputError
from .kernels import ar1_recursion

APPENDIX_C = "appendix_c"
ENDOGENOUS = "endogenous_two_period"
AVAILABILITY = "availability_marginal"
MULTI_ARM = "multi_arm"
KINDS = (APPENDIX_C, ENDOGENOUS, AVAILABILITY, MULTI_ARM)
ENDOGENOUS_LAWS = ("carryover", "shared_shock")

_ALIASES = {
    "appendixc": APPENDIX_C, "appendix-c": APPENDIX_C,
    "endogenoustwoperiod": ENDOGENOUS, "endogenous": ENDOGENOUS, "endogeneity": ENDOGENOUS,
    "availabilitymarginal": AVAILABILITY, "availability": AVAILABILITY,
    "multiarm": MULTI_ARM, "multi-arm": MULTI_ARM,
}

LOG_HALF = math.log(0.5)

# zero-inflated stand-in for log(0.5 + prior 30-minute steps)
STEP_COVARIATE = {"kind": "zero_inflated_normal", "p_zero": 0.4, "zero_value": LOG_HALF,
                  "mean": 3.5, "sd": 2.0}

DEFAULTS: dict[str, dict] = {
    APPENDIX_C: {
        "intercept": 1.6085, "coef_x": 0.4037, "coef_y": 0.0655, "effect": 0.1229,
        "p": 0.6, "noise_sd": 2.716, "x_dist": STEP_COVARIATE, "y_init": "stationary",
        "decisions_per_day": 5,
    },
    ENDOGENOUS: {
        "alpha0": 1.0, "alpha1": 0.5, "beta0": 0.3, "beta1": 0.2, "tau": 1.0,
        "noise_sd": 1.0, "p": 0.6, "exogenous": False, "law": "carryover", "carryover": 1.0,
    },
    AVAILABILITY: {
        "decisions_per_day": 5, "avail_start": 0.9, "avail_end": 0.3,
        "effect_coefs": [0.5, -0.02], "base_intercept": 1.0, "base_x": 0.8,
        "base_x2": 0.3, "base_day": -0.01, "tau": 0.5, "noise_sd": 1.0,
        "p_low": 0.6, "p_high": 0.6,
    },
    MULTI_ARM: {
        "arms": ["walking", "anti_sedentary"], "probs": [0.3, 0.3], "avail_prob": 0.8,
        "decisions_per_day": 5, "x_dist": STEP_COVARIATE,
        "base_intercept": 1.8, "base_steps": 0.4, "base_home": 0.15, "base_planning": 0.05,
        "base_steps2": 0.0, "tau": 0.3, "noise_sd": 2.7,
        "effects": {"walking": [0.05, 0.38], "anti_sedentary": [0.09, -0.14]},
    },
}


def _canonical_kind(kind: str) -> str:
    k = str(kind).strip()
    if k in KINDS:
        return k
    key = k.lower().replace("_", "").replace(" ", "")
    if key in _ALIASES:
        return _ALIASES[key]
    key2 = k.lower()
    if key2 in _ALIASES:
        return _ALIASES[key2]
    raise InputError(f"unknown scenario kind {kind!r}; expected one of {list(KINDS)}")


@dataclass(frozen=True)
class SimScenario:
    """A generative model with its size and seed.

    ``params`` overrides the kind's defaults (see :data:`DEFAULTS`).
    """

    kind: str
    n: int
    T: int
    seed: int = 0
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        kind = _canonical_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if int(self.n) != self.n or self.n < 1:
            raise InputError(f"n must be a positive integer, got {self.n!r}")
        if int(self.T) != self.T or self.T < 1:
            raise InputError(f"T must be a positive integer, got {self.T!r}")
        if kind == ENDOGENOUS and self.T != 2:
            raise InputError("endogenous_two_period scenarios have T = 2")
        if int(self.seed) != self.seed or self.seed < 0 or self.seed >= 2 ** 64:
            raise InputError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "seed", int(self.seed))
        unknown = set(self.params) - set(DEFAULTS[kind])
        if unknown:
            raise InputError(f"unknown parameters for {kind}: {sorted(unknown)}")
        object.__setattr__(self, "params", dict(self.params))
        _check_params(kind, self.resolved())

    def resolved(self) -> dict:
        out = json.loads(json.dumps(DEFAULTS[self.kind]))
        out.update(self.params)
        return out

    def with_(self, **changes) -> "SimScenario":
        d = {"kind": self.kind, "n": self.n, "T": self.T, "seed": self.seed, "params": self.params}
        d.update(changes)
        return SimScenario(**d)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "T": self.T, "seed": self.seed,
                "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimScenario":
        extra = set(d) - {"kind", "n", "T", "seed", "params"}
        if extra:
            raise InputError(f"unknown scenario keys: {sorted(extra)}")
        try:
            return cls(kind=d["kind"], n=d["n"], T=d["T"], seed=d.get("seed", 0),
                       params=d.get("params", {}))
        except KeyError as e:
            raise InputError(f"scenario is missing {e.args[0]!r}") from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SimScenario":
        return cls.from_dict(json.loads(text))


def _prob_ok(name, v):
    if not (isinstance(v, (int, float)) and 0.0 < v < 1.0):
        raise InputError(f"{name} must be a probability in (0, 1), got {v!r}")


def _sd_ok(name, v):
    # zero is accepted so that tests can switch the noise off
    if not (isinstance(v, (int, float)) and v >= 0.0 and math.isfinite(v)):
        raise InputError(f"{name} must be a finite non-negative standard deviation, got {v!r}")


def _check_dist(d):
    if not isinstance(d, Mapping) or "kind" not in d:
        raise InputError(f"bad covariate distribution {d!r}")
    kind = d["kind"]
    if kind == "zero_inflated_normal":
        _prob_ok("x_dist.p_zero", d["p_zero"])
        _sd_ok("x_dist.sd", d["sd"])
    elif kind == "normal":
        _sd_ok("x_dist.sd", d["sd"])
    elif kind != "constant":
        raise InputError(f"unknown covariate distribution {kind!r}")


def _check_params(kind, p):
    if kind == APPENDIX_C:
        _prob_ok("p", p["p"])
        _sd_ok("noise_sd", p["noise_sd"])
        _check_dist(p["x_dist"])
        if not -1 < p["coef_y"] < 1:
            raise InputError("coef_y must lie in (-1, 1)")
        if p["y_init"] != "stationary" and not isinstance(p["y_init"], (int, float)):
            raise InputError("y_init must be 'stationary' or a number")
    elif kind == ENDOGENOUS:
        _prob_ok("p", p["p"])
        _sd_ok("noise_sd", p["noise_sd"])
        _sd_ok("tau", p["tau"])
        if p["law"] not in ENDOGENOUS_LAWS:
            raise InputError(f"law must be one of {list(ENDOGENOUS_LAWS)}, got {p['law']!r}")
    elif kind == AVAILABILITY:
        for k in ("avail_start", "avail_end", "p_low", "p_high"):
            _prob_ok(k, p[k])
        _sd_ok("noise_sd", p["noise_sd"])
        _sd_ok("tau", p["tau"])
        if not p["effect_coefs"]:
            raise InputError("effect_coefs must be non-empty")
    elif kind == MULTI_ARM:
        arms, probs = p["arms"], p["probs"]
        if len(arms) != len(probs) or not arms:
            raise InputError("arms and probs must have the same non-zero length")
        for a, v in zip(arms, probs):
            _prob_ok(f"probs[{a}]", v)
        if sum(probs) >= 1:
            raise InputError("arm probabilities must sum to less than 1")
        if CONTROL in arms:
            raise InputError(f"arm label {CONTROL!r} is reserved")
        _prob_ok("avail_prob", p["avail_prob"])
        _sd_ok("noise_sd", p["noise_sd"])
        _sd_ok("tau", p["tau"])
        _check_dist(p["x_dist"])
        missing = set(arms) - set(p["effects"])
        if missing:
            raise InputError(f"effects missing for arms {sorted(missing)}")


# -- random streams -------------------------------------------------------------


def rng_for(seed: int, rep: int = 0) -> np.random.Generator:
    """Independent generator for replication ``rep`` of study ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(rep),))))


def draw_covariate(dist: Mapping, rng: np.random.Generator, size) -> np.ndarray:
    kind = dist["kind"]
    if kind == "constant":
        return np.full(size, float(dist["value"]))
    if kind == "normal":
        return rng.normal(dist["mean"], dist["sd"], size)
    z = float(dist["zero_value"])
    zero = rng.random(size) < dist["p_zero"]
    a = (z - dist["mean"]) / dist["sd"]
    tail = stats.truncnorm.rvs(a, np.inf, loc=dist["mean"], scale=dist["sd"], size=size,
                               random_state=rng)
    return np.where(zero, z, tail)


def covariate_mean(dist: Mapping) -> float:
    kind = dist["kind"]
    if kind == "constant":
        return float(dist["value"])
    if kind == "normal":
        return float(dist["mean"])
    z = float(dist["zero_value"])
    a = (z - dist["mean"]) / dist["sd"]
    tail = stats.truncnorm.mean(a, np.inf, loc=dist["mean"], scale=dist["sd"])
    return float(dist["p_zero"] * z + (1 - dist["p_zero"]) * tail)


def _ids(n: int, T: int) -> np.ndarray:
    return np.repeat(np.arange(1, n + 1), T).astype(str)


def _times(n: int, T: int) -> np.ndarray:
    return np.tile(np.arange(1, T + 1), n)


# -- generators -----------------------------------------------------------------


def appendix_c_mean(x, y_prev, a, params: Mapping | None = None):
    """Conditional mean of the next outcome in the ``appendix_c`` scenario."""
    p = dict(DEFAULTS[APPENDIX_C])
    p.update(params or {})
    return p["intercept"] + p["coef_x"] * np.asarray(x) + p["coef_y"] * np.asarray(y_prev) \
        + p["effect"] * (np.asarray(a) - p["p"])


def appendix_c_stationary(params: Mapping) -> tuple[float, float]:
    """Mean and SD of the outcome recursion with treatment and covariate held at their means."""
    b = params["coef_y"]
    mean = (params["intercept"] + params["coef_x"] * covariate_mean(params["x_dist"])) / (1 - b)
    sd = params["noise_sd"] / math.sqrt(1 - b * b)
    return mean, sd


def gen_appendix_c(scenario: SimScenario, rep: int = 0) -> MrtDataset:
    if scenario.kind != APPENDIX_C:
        raise InputError("not an appendix_c scenario")
    prm = scenario.resolved()
    n, T = scenario.n, scenario.T
    rng = rng_for(scenario.seed, rep)
    x = draw_covariate(prm["x_dist"], rng, (n, T))
    a = (rng.random((n, T)) < prm["p"]).astype(float)
    shocks = rng.normal(0.0, 1.0, (n, T)) * prm["noise_sd"]
    if prm["y_init"] == "stationary":
        m0, s0 = appendix_c_stationary(prm)
        y0 = m0 + s0 * rng.normal(0.0, 1.0, n)
    else:
        y0 = np.full(n, float(prm["y_init"]))
    drift = prm["intercept"] + prm["coef_x"] * x + prm["effect"] * (a - prm["p"])
    y = ar1_recursion(drift, prm["coef_y"], y0, shocks)
    t = _times(n, T)
    return MrtDataset(
        participant=_ids(n, T), t=t, available=np.ones(n * T, dtype=np.int64),
        arm=np.where(a.ravel() == 1, "treatment", CONTROL),
        rand_prob=np.full((n * T, 1), prm["p"]), outcome=y[:, 1:].ravel(),
        covariates={"x": x.ravel(), "y_lag": y[:, :-1].ravel(),
                    "day": ((t - 1) // prm["decisions_per_day"]).astype(float)},
        arms=["treatment"],
    )


def first_period_residual_mean(y2, params: Mapping) -> np.ndarray:
    """``E[r1 | Y2]`` where ``r1 = Y2 - E[Y2 | X1, A1]`` in the two-period model.

    Given ``A1 = a``, ``Y2`` is normal with mean ``alpha0 + beta0 a``, slope
    ``b_a = alpha1 + beta1 a`` on ``X1 ~ N(0, 1)`` and residual variance
    ``tau^2 + noise_sd^2``, so the conditional mean is a two-component
    mixture of linear predictors.
    """
    y2 = np.asarray(y2, dtype=float)
    s2 = params["tau"] ** 2 + params["noise_sd"] ** 2
    if s2 == 0.0:
        return np.zeros_like(y2)
    p = params["p"]
    m = np.array([params["alpha0"], params["alpha0"] + params["beta0"]])
    b = np.array([params["alpha1"], params["alpha1"] + params["beta1"]])
    v = b ** 2 + s2
    logw = np.log([1 - p, p]) + stats.norm.logpdf(y2[:, None], m, np.sqrt(v))
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return np.sum(w * (s2 / v) * (y2[:, None] - m), axis=1)


def gen_endogenous_two_period(scenario: SimScenario, rep: int = 0) -> MrtDataset:
    """Two decision points with ``X2 = Y2``.

    ``Y2 = m1 + u + e1`` with ``m1 = alpha0 + alpha1 X1 + A1 (beta0 + beta1 X1)``.
    Under the default ``carryover`` law the second outcome carries the part
    of the first-period deviation ``r1 = u + e1`` that ``Y2`` does not reveal,
    ``Y3 = alpha0 + alpha1 X2 + A2 (beta0 + beta1 X2) + kappa (r1 - E[r1 | Y2]) + e2``,
    so the linear mean model holds exactly at both decision points while
    the two residuals stay correlated.  The ``shared_shock`` law adds ``u``
    to ``Y3`` instead; ``u`` is then correlated with ``X2`` and the mean
    model fails at the second decision point.  With ``exogenous`` set, ``X2``
    is redrawn independently and ``Y3`` carries ``kappa r1`` itself.
    """
    if scenario.kind != ENDOGENOUS:
        raise InputError("not an endogenous_two_period scenario")
    prm = scenario.resolved()
    n = scenario.n
    rng = rng_for(scenario.seed, rep)
    a0, a1, b0, b1 = prm["alpha0"], prm["alpha1"], prm["beta0"], prm["beta1"]
    x1 = rng.normal(0.0, 1.0, n)
    u = prm["tau"] * rng.normal(0.0, 1.0, n)
    A = (rng.random((n, 2)) < prm["p"]).astype(float)
    e = prm["noise_sd"] * rng.normal(0.0, 1.0, (n, 2))
    x2_exo = rng.normal(0.0, 1.0, n)
    r1 = u + e[:, 0]
    y2 = a0 + a1 * x1 + A[:, 0] * (b0 + b1 * x1) + r1
    x2 = x2_exo if prm["exogenous"] else y2
    if prm["law"] == "shared_shock":
        carry = u
    elif prm["exogenous"]:
        # r1 is independent of every covariate and treatment once X2 is redrawn
        carry = prm["carryover"] * r1
    else:
        carry = prm["carryover"] * (r1 - first_period_residual_mean(y2, prm))
    y3 = a0 + a1 * x2 + A[:, 1] * (b0 + b1 * x2) + carry + e[:, 1]
    return MrtDataset(
        participant=_ids(n, 2), t=_times(n, 2), available=np.ones(2 * n, dtype=np.int64),
        arm=np.where(A.ravel() == 1, "treatment", CONTROL), rand_prob=np.full((2 * n, 1), prm["p"]),
        outcome=np.column_stack([y2, y3]).ravel(),
        covariates={"x": np.column_stack([x1, x2]).ravel()}, arms=["treatment"],
    )


def availability_profile(scenario: SimScenario) -> np.ndarray:
    """``E[I_t]`` for t = 1..T (linear from ``avail_start`` to ``avail_end``)."""
    prm = scenario.resolved()
    T = scenario.T
    frac = np.zeros(T) if T == 1 else np.arange(T) / (T - 1)
    return prm["avail_start"] + (prm["avail_end"] - prm["avail_start"]) * frac


def effect_by_day(day, coefs) -> np.ndarray:
    """Polynomial ``sum_k coefs[k] * day**k``."""
    day = np.asarray(day, dtype=float)
    return sum(c * day ** k for k, c in enumerate(coefs))


def true_effect_by_time(scenario: SimScenario) -> np.ndarray:
    prm = scenario.resolved()
    day = np.arange(scenario.T) // prm["decisions_per_day"]
    return effect_by_day(day, prm["effect_coefs"])


def marginal_effect_truth(scenario: SimScenario) -> float:
    """Availability-weighted average ``sum E[I_t] beta(t) / sum E[I_t]``."""
    w = availability_profile(scenario)
    return float(np.sum(w * true_effect_by_time(scenario)) / np.sum(w))


def gen_availability_marginal(scenario: SimScenario, rep: int = 0) -> MrtDataset:
    if scenario.kind != AVAILABILITY:
        raise InputError("not an availability_marginal scenario")
    prm = scenario.resolved()
    n, T = scenario.n, scenario.T
    rng = rng_for(scenario.seed, rep)
    avail = (rng.random((n, T)) < availability_profile(scenario)[None, :]).astype(np.int64)
    x = rng.normal(0.0, 1.0, (n, T))
    p = np.where(x > 0, prm["p_high"], prm["p_low"])
    a = ((rng.random((n, T)) < p) & (avail == 1)).astype(float)
    u = prm["tau"] * rng.normal(0.0, 1.0, (n, 1))
    noise = prm["noise_sd"] * rng.normal(0.0, 1.0, (n, T))
    day = np.tile(np.arange(T) // prm["decisions_per_day"], (n, 1)).astype(float)
    base = (prm["base_intercept"] + prm["base_x"] * x + prm["base_x2"] * x ** 2
            + prm["base_day"] * day)
    y = base + a * effect_by_day(day, prm["effect_coefs"]) + u + noise
    return MrtDataset(
        participant=_ids(n, T), t=_times(n, T), available=avail.ravel(),
        arm=np.where(a.ravel() == 1, "treatment", CONTROL), rand_prob=p.reshape(-1, 1),
        outcome=y.ravel(), covariates={"x": x.ravel(), "day": day.ravel()}, arms=["treatment"],
    )


def gen_multi_arm(scenario: SimScenario, rep: int = 0) -> MrtDataset:
    if scenario.kind != MULTI_ARM:
        raise InputError("not a multi_arm scenario")
    prm = scenario.resolved()
    n, T = scenario.n, scenario.T
    arms, probs = list(prm["arms"]), np.asarray(prm["probs"], dtype=float)
    rng = rng_for(scenario.seed, rep)
    dpd = prm["decisions_per_day"]
    day = np.tile(np.arange(T) // dpd, (n, 1)).astype(float)
    n_days = int(day.max()) + 1
    avail = (rng.random((n, T)) < prm["avail_prob"]).astype(np.int64)
    steps = draw_covariate(prm["x_dist"], rng, (n, T))
    home = (rng.random((n, T)) < 0.5).astype(float)
    planning = np.repeat((rng.random((n, n_days)) < 0.5).astype(float), dpd, axis=1)[:, :T]
    draw = rng.random((n, T))
    edges = np.cumsum(probs)
    choice = np.searchsorted(edges, draw, side="right")       # len(arms) means control
    choice = np.where(avail == 1, choice, len(arms))
    u = prm["tau"] * rng.normal(0.0, 1.0, (n, 1))
    noise = prm["noise_sd"] * rng.normal(0.0, 1.0, (n, T))
    y = (prm["base_intercept"] + prm["base_steps"] * steps + prm["base_steps2"] * steps ** 2
         + prm["base_home"] * home + prm["base_planning"] * planning + u + noise)
    for k, arm in enumerate(arms):
        b = prm["effects"][arm]
        y = y + (choice == k) * (b[0] + b[1] * home)
    labels = np.asarray(arms + [CONTROL], dtype=object)[choice.ravel()]
    return MrtDataset(
        participant=_ids(n, T), t=_times(n, T), available=avail.ravel(), arm=labels,
        rand_prob=np.tile(probs, (n * T, 1)), outcome=y.ravel(),
        covariates={"steps_prior": steps.ravel(), "day": day.ravel(),
                    "home_work": home.ravel(), "planning": planning.ravel()},
        arms=arms,
    )


_GENERATORS = {
    APPENDIX_C: gen_appendix_c,
    ENDOGENOUS: gen_endogenous_two_period,
    AVAILABILITY: gen_availability_marginal,
    MULTI_ARM: gen_multi_arm,
}


def generate(scenario: SimScenario, rep: int = 0) -> MrtDataset:
    """Dataset for replication ``rep`` of ``scenario``."""
    return _GENERATORS[scenario.kind](scenario, rep)


__all__ = [
    "APPENDIX_C", "AVAILABILITY", "DEFAULTS", "ENDOGENOUS", "KINDS", "MULTI_ARM", "SimScenario",
    "appendix_c_mean", "appendix_c_stationary", "availability_profile", "covariate_mean",
    "draw_covariate", "effect_by_day", "first_period_residual_mean", "gen_appendix_c", "gen_availability_marginal",
    "gen_endogenous_two_period", "gen_multi_arm", "generate", "marginal_effect_truth",
    "rng_for", "true_effect_by_time",
]
