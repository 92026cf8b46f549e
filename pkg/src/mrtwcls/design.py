"""Model specification and per-row design construction.

A :class:`ModelSpec` declares the control terms (working model for the
untreated mean), the moderator terms of the linear excursion-effect model for
each treatment arm, and how the numerator probability used for centering and
reweighting is chosen.  :func:`build_design` turns a dataset plus a spec into
the stacked regressor matrix ``[Z | (A_k - pt_k) S_k ...]`` with per-row
weights ``I * W``.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .dataset import MrtDataset
from .errors import (
    DegenerateProbability,
    EmpiricalMeanOutOfRange,
    SpecViolation,
)

INTERCEPT = "(Intercept)"

Term = tuple[str, ...]


def parse_term(term) -> Term:
    """``"x"`` -> ``("x",)``; ``"x:day"`` or ``["x", "day"]`` -> ``("x", "day")``."""
    if isinstance(term, str):
        parts = tuple(p.strip() for p in term.split(":"))
    else:
        parts = tuple(str(p).strip() for p in term)
    if not parts or any(not p for p in parts):
        raise SpecViolation(f"malformed term {term!r}")
    return parts


def term_name(term: Term) -> str:
    return ":".join(term)


@dataclass(frozen=True)
class Constant:
    """Numerator probability fixed at ``value`` (a float, or one per arm)."""

    value: Union[float, Mapping[str, float]]

    def per_arm(self, arms: Sequence[str]) -> dict[str, float]:
        if isinstance(self.value, Mapping):
            missing = set(arms) - set(self.value)
            if missing:
                raise SpecViolation(f"constant numerator probability missing for arms {sorted(missing)}")
            return {a: float(self.value[a]) for a in arms}
        return {a: float(self.value) for a in arms}


@dataclass(frozen=True)
class EmpiricalArmMean:
    """Numerator probability = share of available rows assigned to the arm."""


@dataclass(frozen=True)
class MatchDenominator:
    """Numerator probability = the randomization probability itself."""


NumeratorPolicy = Union[Constant, EmpiricalArmMean, MatchDenominator]


def _policy_from_json(d) -> NumeratorPolicy:
    if isinstance(d, str):
        d = {"policy": d}
    tag = str(d.get("policy", "")).lower().replace("-", "_")
    if tag == "constant":
        if "value" not in d:
            raise SpecViolation("constant numerator policy needs a 'value'")
        v = d["value"]
        return Constant(dict(v) if isinstance(v, Mapping) else float(v))
    if tag in ("empirical_arm_mean", "empirical"):
        return EmpiricalArmMean()
    if tag in ("match_denominator", "match"):
        return MatchDenominator()
    raise SpecViolation(f"unknown numerator policy {d!r}")


def _policy_to_json(p: NumeratorPolicy) -> dict:
    if isinstance(p, Constant):
        v = dict(p.value) if isinstance(p.value, Mapping) else p.value
        return {"policy": "constant", "value": v}
    if isinstance(p, MatchDenominator):
        return {"policy": "match_denominator"}
    return {"policy": "empirical_arm_mean"}


@dataclass(frozen=True)
class ModelSpec:
    """Controls, per-arm moderators, numerator policy and arms.

    ``moderators`` may be a single list (shared by every arm) or a mapping
    from arm to list.  Intercepts are implicit in both controls and
    moderators.  ``arm_groups`` optionally pools several dataset arms into
    one analysed arm (e.g. two message types analysed as "any message").
    """

    arms: tuple[str, ...]
    controls: tuple[Term, ...] = ()
    moderators: Mapping[str, tuple[Term, ...]] = field(default_factory=dict)
    numerator: NumeratorPolicy = field(default_factory=EmpiricalArmMean)
    arm_groups: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    labels: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        arms = (self.arms,) if isinstance(self.arms, str) else tuple(self.arms)
        if not arms:
            raise SpecViolation("spec needs at least one arm")
        if len(set(arms)) != len(arms):
            raise SpecViolation("duplicate arms in spec")
        controls = tuple(parse_term(t) for t in self.controls)
        if len(set(controls)) != len(controls):
            raise SpecViolation("duplicate control terms")
        mods = self.moderators
        if not isinstance(mods, Mapping):
            mods = {a: mods for a in arms}
        unknown = set(mods) - set(arms)
        if unknown:
            raise SpecViolation(f"moderators given for unknown arms {sorted(unknown)}")
        mods = {a: tuple(parse_term(t) for t in mods.get(a, ())) for a in arms}
        for a, terms in mods.items():
            if len(set(terms)) != len(terms):
                raise SpecViolation(f"duplicate moderator terms for arm {a!r}")
            for t in terms:
                if t not in controls:
                    raise SpecViolation(
                        f"moderator {term_name(t)!r} of arm {a!r} is not among the control terms; "
                        "the controls must contain every moderator")
        groups = {str(k): tuple(str(x) for x in v) for k, v in dict(self.arm_groups).items()}
        if isinstance(self.numerator, Constant):
            for a, c in self.numerator.per_arm(arms).items():
                if not 0.0 < c < 1.0:
                    raise SpecViolation(f"constant numerator probability for {a!r} must be in (0, 1), got {c}")
            if sum(self.numerator.per_arm(arms).values()) >= 1.0:
                raise SpecViolation("constant numerator probabilities must sum to less than 1")
        elif not isinstance(self.numerator, (EmpiricalArmMean, MatchDenominator)):
            raise SpecViolation(f"unknown numerator policy {self.numerator!r}")
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "controls", controls)
        object.__setattr__(self, "moderators", mods)
        object.__setattr__(self, "arm_groups", groups)
        object.__setattr__(self, "labels", dict(self.labels))

    @property
    def control_names(self) -> list[str]:
        return [INTERCEPT] + [term_name(t) for t in self.controls]

    def beta_names(self, arm: str) -> list[str]:
        return [arm] + [f"{arm}:{term_name(t)}" for t in self.moderators[arm]]

    @property
    def n_params(self) -> int:
        return 1 + len(self.controls) + sum(1 + len(self.moderators[a]) for a in self.arms)

    # -- JSON -----------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        known = {"arms", "controls", "moderators", "numerator", "arm_groups", "labels", "name"}
        extra = set(d) - known
        if extra:
            raise SpecViolation(f"unknown spec keys: {sorted(extra)}")
        if "arms" not in d:
            raise SpecViolation("spec needs 'arms'")
        return cls(
            arms=d["arms"],
            controls=d.get("controls", ()),
            moderators=d.get("moderators", {}),
            numerator=_policy_from_json(d.get("numerator", {"policy": "empirical_arm_mean"})),
            arm_groups=d.get("arm_groups", {}),
            labels=d.get("labels", {}),
        )

    def to_dict(self) -> dict:
        return {
            "arms": list(self.arms),
            "controls": [term_name(t) for t in self.controls],
            "moderators": {a: [term_name(t) for t in ts] for a, ts in self.moderators.items()},
            "numerator": _policy_to_json(self.numerator),
            "arm_groups": {k: list(v) for k, v in self.arm_groups.items()},
            "labels": dict(self.labels),
        }

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        return cls.from_dict(json.loads(text))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class DesignRow:
    z: np.ndarray
    s: tuple[np.ndarray, ...]
    a: tuple[float, ...]
    w: float
    i_avail: int
    y: float


@dataclass(frozen=True, eq=False)
class Design:
    """Stacked WCLS design over all rows (unavailable rows carry weight 0)."""

    X: np.ndarray            # (N, q) = [Z | (A_1 - pt_1) S_1 | ...]
    y: np.ndarray            # outcome, 0.0 where unavailable
    weight: np.ndarray       # I * W
    w: np.ndarray            # W, nan where unavailable
    avail: np.ndarray
    A: np.ndarray            # (N, K) arm indicators
    prob: np.ndarray         # (N, K) randomization probabilities
    p_tilde: np.ndarray      # (N, K) numerator probabilities
    Z: np.ndarray
    S: tuple[np.ndarray, ...]
    names: tuple[str, ...]
    n_alpha: int
    beta_slices: Mapping[str, slice]
    starts: np.ndarray       # first row of each participant
    pindex: np.ndarray
    n: int

    @property
    def q(self) -> int:
        return self.X.shape[1]

    def rows(self):
        for k in range(len(self.y)):
            yield DesignRow(
                z=self.Z[k],
                s=tuple(S[k] for S in self.S),
                a=tuple(self.A[k] - self.p_tilde[k]),
                w=float(self.w[k]),
                i_avail=int(self.avail[k]),
                y=float(self.y[k]),
            )

    def by_participant(self):
        """List of row-lists, one per participant."""
        rows = list(self.rows())
        bounds = list(self.starts) + [len(rows)]
        return [rows[bounds[i]:bounds[i + 1]] for i in range(len(self.starts))]


def _eval_term(dataset: MrtDataset, term: Term) -> np.ndarray:
    out = None
    for name in term:
        col = dataset.column(name)
        out = col.astype(float, copy=True) if out is None else out * col
    return out


def _eval_terms(dataset: MrtDataset, terms) -> np.ndarray:
    cols = [np.ones(len(dataset))] + [_eval_term(dataset, t) for t in terms]
    return np.column_stack(cols)


def _resolve_arms(dataset: MrtDataset, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Arm indicators and randomization probabilities for the spec's arms."""
    ind = dataset.arm_indicators
    cols_a, cols_p = [], []
    used: set[str] = set()
    for arm in spec.arms:
        members = spec.arm_groups.get(arm, (arm,))
        for m in members:
            if m not in dataset.arms:
                raise SpecViolation(f"arm {m!r} not present in dataset (arms: {list(dataset.arms)})")
            if m in used:
                raise SpecViolation(f"dataset arm {m!r} used by more than one analysed arm")
            used.add(m)
        idx = [dataset.arms.index(m) for m in members]
        cols_a.append(ind[:, idx].sum(axis=1))
        cols_p.append(dataset.rand_prob[:, idx].sum(axis=1))
    return np.column_stack(cols_a).astype(float), np.column_stack(cols_p)


def numerator_prob(spec: ModelSpec, dataset: MrtDataset) -> np.ndarray:
    """Per-row numerator probabilities, shape (rows, arms).

    Values on unavailable rows are filled with the same rule but never used.
    """
    A, p = _resolve_arms(dataset, spec)
    avail = dataset.available == 1
    eps = dataset.eps
    K = len(spec.arms)
    if isinstance(spec.numerator, Constant):
        c = spec.numerator.per_arm(spec.arms)
        return np.tile([c[a] for a in spec.arms], (len(dataset), 1)).astype(float)
    if isinstance(spec.numerator, MatchDenominator):
        for k, arm in enumerate(spec.arms):
            pk = p[avail, k]
            if pk.size and np.any(pk != pk[0]):
                raise SpecViolation(
                    f"match_denominator requires a constant randomization probability for arm {arm!r}")
        out = p.copy()
        out[~avail] = p[avail][0] if avail.any() else 0.5
        return out
    if not avail.any():
        raise EmpiricalMeanOutOfRange("no available rows to average over")
    mean = A[avail].mean(axis=0)
    for k, arm in enumerate(spec.arms):
        if mean[k] <= eps or mean[k] >= 1 - eps:
            raise EmpiricalMeanOutOfRange(
                f"empirical treatment rate of arm {arm!r} is {mean[k]:g}; it must lie strictly inside (0, 1)")
    if K > 1 and mean.sum() >= 1 - eps:
        raise EmpiricalMeanOutOfRange("empirical treatment rates leave no untreated rows")
    return np.tile(mean, (len(dataset), 1))


def change_of_probability_weight(A: np.ndarray, p: np.ndarray, p_tilde: np.ndarray) -> np.ndarray:
    """Ratio of numerator to randomization probability of the realised option.

    With arms ``k`` and the untreated option, ``W = pt_k / p_k`` when arm
    ``k`` was assigned and ``(1 - sum pt) / (1 - sum p)`` otherwise.  For a
    single arm this is ``(pt/p)^A ((1-pt)/(1-p))^(1-A)``.
    """
    A = np.asarray(A, dtype=float)
    p = np.asarray(p, dtype=float)
    p_tilde = np.asarray(p_tilde, dtype=float)
    if A.ndim == 1:
        A, p, p_tilde = A[:, None], p[:, None], p_tilde[:, None]
    treated = A.sum(axis=1) > 0
    num_arm = (A * p_tilde).sum(axis=1)
    den_arm = (A * p).sum(axis=1)
    num0 = 1.0 - p_tilde.sum(axis=1)
    den0 = 1.0 - p.sum(axis=1)
    return np.where(treated, num_arm / np.where(treated, den_arm, 1.0),
                    num0 / np.where(treated, 1.0, den0))


def build_design(dataset: MrtDataset, spec: ModelSpec) -> Design:
    A, p = _resolve_arms(dataset, spec)
    avail = dataset.available == 1
    eps = dataset.eps
    pa = p[avail]
    if np.any((pa < eps) | (pa > 1 - eps)) or np.any(1 - pa.sum(axis=1) < eps):
        raise DegenerateProbability(f"randomization probability within {eps:g} of 0 or 1")
    p_tilde = numerator_prob(spec, dataset)

    w = np.full(len(dataset), np.nan)
    w[avail] = change_of_probability_weight(A[avail], p[avail], p_tilde[avail])
    weight = np.where(avail, w, 0.0)

    Z = _eval_terms(dataset, spec.controls)
    S = tuple(_eval_terms(dataset, spec.moderators[a]) for a in spec.arms)
    blocks = [(A[:, k] - p_tilde[:, k])[:, None] * S[k] for k in range(len(spec.arms))]
    X = np.column_stack([Z] + blocks)
    names = list(spec.control_names)
    slices = {}
    for a in spec.arms:
        bn = spec.beta_names(a)
        slices[a] = slice(len(names), len(names) + len(bn))
        names += bn
    y = np.where(avail, dataset.outcome, 0.0)
    return Design(
        X=X, y=y, weight=weight, w=w, avail=avail.astype(np.int64), A=A, prob=p,
        p_tilde=p_tilde, Z=Z, S=S, names=tuple(names), n_alpha=Z.shape[1],
        beta_slices=slices, starts=np.asarray(dataset.starts),
        pindex=np.asarray(dataset.participant_index), n=dataset.n,
    )


def constant_probability_design(dataset: MrtDataset, spec: ModelSpec) -> Design:
    """Unweighted design for a trial with constant randomization probability.

    Centers each arm indicator at its (constant) randomization probability
    and uses availability as the only weight.  Ignores ``spec.numerator``.
    """
    A, p = _resolve_arms(dataset, spec)
    avail = dataset.available == 1
    p_const = np.empty(len(spec.arms))
    for k, arm in enumerate(spec.arms):
        pk = p[avail, k]
        if pk.size == 0 or np.any(pk != pk[0]):
            raise SpecViolation(f"randomization probability of arm {arm!r} is not constant")
        p_const[k] = pk[0]
    Z = _eval_terms(dataset, spec.controls)
    S = tuple(_eval_terms(dataset, spec.moderators[a]) for a in spec.arms)
    X = np.column_stack([Z] + [(A[:, k] - p_const[k])[:, None] * S[k] for k in range(len(spec.arms))])
    names = list(spec.control_names)
    slices = {}
    for a in spec.arms:
        bn = spec.beta_names(a)
        slices[a] = slice(len(names), len(names) + len(bn))
        names += bn
    ones = np.where(avail, 1.0, np.nan)
    return Design(
        X=X, y=np.where(avail, dataset.outcome, 0.0), weight=avail.astype(float), w=ones,
        avail=avail.astype(np.int64), A=A, prob=p, p_tilde=np.tile(p_const, (len(dataset), 1)),
        Z=Z, S=S, names=tuple(names), n_alpha=Z.shape[1], beta_slices=slices,
        starts=np.asarray(dataset.starts), pindex=np.asarray(dataset.participant_index),
        n=dataset.n,
    )


__all__ = [
    "Constant", "Design", "DesignRow", "EmpiricalArmMean", "INTERCEPT", "MatchDenominator",
    "ModelSpec", "build_design", "change_of_probability_weight", "constant_probability_design",
    "numerator_prob", "parse_term", "term_name",
]
