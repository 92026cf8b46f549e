"""Long-format micro-randomized trial data.

One row per (participant, decision point).  A dataset is validated once at
construction and is read-only afterwards; every transform returns a new
dataset.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    ColumnTypeError,
    InputError,
    InvariantViolation,
    MissingColumn,
    NegativeValue,
    UnknownColumn,
)

CONTROL = "control"
DEFAULT_EPS = 1e-6
PROB_PREFIX = "prob_"


@dataclass(frozen=True)
class Schema:
    """Maps CSV columns to their roles.

    ``prob`` maps each non-control arm label to the column holding its
    randomization probability.  When omitted, every column named
    ``prob_<arm>`` is taken.  ``covariates`` defaults to every column not
    claimed by another role.
    """

    participant: str = "participant"
    t: str = "t"
    available: str = "available"
    arm: str = "arm"
    prob: Mapping[str, str] | None = None
    outcome: str = "outcome"
    covariates: Sequence[str] | None = None
    control_label: str = CONTROL

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise InputError(f"unknown schema keys: {sorted(extra)}")
        d = dict(d)
        if d.get("covariates") is not None:
            d["covariates"] = tuple(d["covariates"])
        if d.get("prob") is not None:
            d["prob"] = dict(d["prob"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "participant": self.participant,
            "t": self.t,
            "available": self.available,
            "arm": self.arm,
            "prob": dict(self.prob) if self.prob is not None else None,
            "outcome": self.outcome,
            "covariates": list(self.covariates) if self.covariates is not None else None,
            "control_label": self.control_label,
        }


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MrtRow:
    participant_id: str
    t: int
    available: int
    arm: str
    arm_indicators: tuple[int, ...]
    rand_prob: tuple[float, ...]
    outcome: float
    covariates: Mapping[str, float] = field(default_factory=dict)


class MrtDataset:
    """Validated, immutable MRT table.

    Rows are grouped by participant (in order of first appearance) and sorted
    by decision point within participant.
    """

    __slots__ = (
        "participant", "t", "available", "arm", "rand_prob", "outcome",
        "_covariates", "arms", "eps", "starts", "_pindex",
    )

    def __init__(self, participant, t, available, arm, rand_prob, outcome,
                 covariates: Mapping[str, np.ndarray], arms: Sequence[str],
                 *, eps: float = DEFAULT_EPS, validate: bool = True):
        participant = np.asarray(participant).astype(str).astype(object)
        n_rows = len(participant)
        arms = tuple(str(a) for a in arms)
        if not arms:
            raise InputError("at least one non-control arm is required")
        if CONTROL in arms:
            raise InputError(f"arm label {CONTROL!r} is reserved")
        if len(set(arms)) != len(arms):
            raise InputError("duplicate arm labels")
        t = np.asarray(t)
        available = np.asarray(available)
        arm = np.asarray(arm).astype(str).astype(object)
        rand_prob = np.asarray(rand_prob, dtype=float).reshape(n_rows, len(arms))
        outcome = np.asarray(outcome, dtype=float)
        cov = {str(k): np.asarray(v, dtype=float) for k, v in covariates.items()}
        for k, v in cov.items():
            if v.shape != (n_rows,):
                raise InputError(f"covariate {k!r} has wrong length")
        for name, v in (("t", t), ("available", available), ("arm", arm), ("outcome", outcome)):
            if v.shape != (n_rows,):
                raise InputError(f"{name} has wrong length")
        reserved = {"t", "available", "outcome", "participant", "arm"}
        clash = reserved & set(cov)
        if clash:
            raise InputError(f"covariate names clash with reserved names: {sorted(clash)}")

        if validate:
            t = _validate(participant, t, available, arm, rand_prob, outcome, cov, arms, eps)

        # stable grouping: participants by first appearance, rows by t
        _, first, inverse = np.unique(participant, return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        pindex = rank[inverse.reshape(-1)]
        order = np.lexsort((t, pindex))

        if validate:
            ps, ts = pindex[order], t[order]
            dup = np.flatnonzero((ps[1:] == ps[:-1]) & (ts[1:] == ts[:-1]))
            if dup.size:
                raise InvariantViolation(int(order[dup[0] + 1]) + 1,
                                         "duplicate decision point within participant")
            if len(first) < 2:
                raise InvariantViolation(None, "at least 2 participants are required")

        self.participant = _readonly(participant[order])
        self.t = _readonly(t[order].astype(np.int64))
        self.available = _readonly(available[order].astype(np.int64))
        self.arm = _readonly(arm[order])
        self.rand_prob = _readonly(rand_prob[order])
        self.outcome = _readonly(outcome[order])
        self._covariates = {k: _readonly(v[order]) for k, v in cov.items()}
        self.arms = arms
        self.eps = float(eps)
        pidx = pindex[order]
        self._pindex = _readonly(pidx)
        self.starts = _readonly(np.flatnonzero(np.r_[True, pidx[1:] != pidx[:-1]]))

    # -- basic shape --------------------------------------------------------

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n(self) -> int:
        return len(self.starts)

    @property
    def T(self) -> int:
        return int(self.t.max()) if len(self.t) else 0

    @property
    def covariates(self) -> tuple[str, ...]:
        return tuple(self._covariates)

    @property
    def participant_index(self) -> np.ndarray:
        """0-based participant number of every row."""
        return self._pindex

    @property
    def arm_indicators(self) -> np.ndarray:
        return np.column_stack([(self.arm == a) for a in self.arms]).astype(np.int64)

    def column(self, name: str) -> np.ndarray:
        """Numeric column by name: a covariate, ``t``, ``available``,
        ``outcome`` or ``prob_<arm>``."""
        if name in self._covariates:
            return self._covariates[name]
        if name == "t":
            return self.t.astype(float)
        if name == "available":
            return self.available.astype(float)
        if name == "outcome":
            return self.outcome
        if name.startswith(PROB_PREFIX) and name[len(PROB_PREFIX):] in self.arms:
            return self.rand_prob[:, self.arms.index(name[len(PROB_PREFIX):])]
        raise UnknownColumn(name)

    def has_column(self, name: str) -> bool:
        try:
            self.column(name)
        except UnknownColumn:
            return False
        return True

    def rows(self):
        """Iterate over :class:`MrtRow` records (slow; for inspection)."""
        ind = self.arm_indicators
        for k in range(len(self)):
            yield MrtRow(
                participant_id=self.participant[k],
                t=int(self.t[k]),
                available=int(self.available[k]),
                arm=self.arm[k],
                arm_indicators=tuple(int(v) for v in ind[k]),
                rand_prob=tuple(float(v) for v in self.rand_prob[k]),
                outcome=float(self.outcome[k]),
                covariates={c: float(v[k]) for c, v in self._covariates.items()},
            )

    # -- derived datasets ---------------------------------------------------

    def _replace(self, **changes) -> "MrtDataset":
        kw = dict(
            participant=self.participant, t=self.t, available=self.available,
            arm=self.arm, rand_prob=self.rand_prob, outcome=self.outcome,
            covariates=self._covariates, arms=self.arms,
        )
        kw.update(changes)
        return MrtDataset(**kw, eps=self.eps, validate=False)

    def with_covariate(self, name: str, values) -> "MrtDataset":
        values = np.asarray(values, dtype=float)
        if values.shape != self.t.shape:
            raise InputError(f"covariate {name!r} has wrong length")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise InvariantViolation(int(bad[0]) + 1, f"missing or non-finite value in covariate {name!r}")
        cov = dict(self._covariates)
        cov[name] = values
        return self._replace(covariates=cov)

    def to_frame(self) -> pd.DataFrame:
        cols = {
            "participant": self.participant,
            "t": self.t,
            "available": self.available,
            "arm": self.arm,
        }
        for j, a in enumerate(self.arms):
            cols[PROB_PREFIX + a] = self.rand_prob[:, j]
        cols["outcome"] = self.outcome
        cols.update(self._covariates)
        return pd.DataFrame(cols)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MrtDataset):
            return NotImplemented
        if self.arms != other.arms or self.covariates != other.covariates:
            return False
        pairs = [
            (self.participant, other.participant), (self.t, other.t),
            (self.available, other.available), (self.arm, other.arm),
            (self.rand_prob, other.rand_prob), (self.outcome, other.outcome),
        ] + [(self._covariates[c], other._covariates[c]) for c in self.covariates]
        for a, b in pairs:
            if a.shape != b.shape:
                return False
            if a.dtype.kind == "f":
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif not np.array_equal(a, b):
                return False
        return True

    __hash__ = None

    def __repr__(self) -> str:
        return (f"MrtDataset(n={self.n}, T={self.T}, rows={len(self)}, "
                f"arms={list(self.arms)}, covariates={list(self.covariates)})")


def _validate(participant, t, available, arm, rand_prob, outcome, cov, arms, eps):
    def fail(mask, rule):
        idx = np.flatnonzero(mask)
        if idx.size:
            raise InvariantViolation(int(idx[0]) + 1, rule)

    t_float = np.asarray(t, dtype=float)
    fail(~np.isfinite(t_float) | (t_float != np.round(t_float)) | (t_float < 1),
         "decision point t must be an integer >= 1")
    t = t_float.astype(np.int64)

    av = np.asarray(available, dtype=float)
    fail(~np.isin(av, (0.0, 1.0)), "available must be 0 or 1")
    av = av.astype(bool)

    known = np.isin(arm, list(arms) + [CONTROL])
    fail(~known, f"arm label must be {CONTROL!r} or one of {list(arms)}")
    fail(~av & (arm != CONTROL), "treatment delivered on an unavailable row")

    p = rand_prob[av]
    pos = np.flatnonzero(av)
    bad = ~np.isfinite(p) | (p <= eps) | (p >= 1 - eps)
    fail(np.isin(np.arange(len(av)), pos[bad.any(axis=1)]),
         f"randomization probability must lie in ({eps:g}, {1 - eps:g}) on available rows")
    if len(arms) > 1:
        tot = p.sum(axis=1)
        fail(np.isin(np.arange(len(av)), pos[tot >= 1 - eps]),
             "arm probabilities must sum to less than 1")

    fail(av & ~np.isfinite(outcome), "outcome must be finite on available rows")
    for name, v in cov.items():
        fail(~np.isfinite(v), f"missing or non-finite value in covariate {name!r}")
    return t


# -- CSV ------------------------------------------------------------------------


def _numeric(frame: pd.DataFrame, column: str, *, allow_missing: bool) -> np.ndarray:
    raw = frame[column]
    text = raw.astype(str).str.strip().to_numpy(dtype=object)
    blank = raw.isna().to_numpy() | (text == "")
    text[blank] = "nan"
    try:
        # numpy's string conversion is correctly rounded, so written floats read back exactly
        values = text.astype(float)
    except ValueError:
        for k, v in enumerate(text):
            try:
                float(v)
            except ValueError:
                raise ColumnTypeError(k + 1, column, raw.iloc[k]) from None
        raise
    if not allow_missing:
        miss = np.flatnonzero(blank)
        if miss.size:
            raise InvariantViolation(int(miss[0]) + 1, f"missing value in column {column!r}")
    return values


def from_frame(frame: pd.DataFrame, schema: Schema | None = None, *,
               eps: float = DEFAULT_EPS) -> MrtDataset:
    """Validate a raw table (all columns may be strings) into a dataset.

    Row numbers in errors are 1-based positions in ``frame``.
    """
    schema = schema or Schema()
    cols = list(frame.columns)
    for role in ("participant", "t", "available", "arm", "outcome"):
        name = getattr(schema, role)
        if name not in cols:
            raise MissingColumn(name, cols)
    if schema.prob is None:
        prob = {c[len(PROB_PREFIX):]: c for c in cols if c.startswith(PROB_PREFIX)}
        if not prob:
            raise MissingColumn(PROB_PREFIX + "<arm>", cols)
    else:
        prob = dict(schema.prob)
        for c in prob.values():
            if c not in cols:
                raise MissingColumn(c, cols)
    claimed = {schema.participant, schema.t, schema.available, schema.arm,
               schema.outcome, *prob.values()}
    if schema.covariates is None:
        covariates = [c for c in cols if c not in claimed]
    else:
        covariates = list(schema.covariates)
        for c in covariates:
            if c not in cols:
                raise MissingColumn(c, cols)

    part = frame[schema.participant]
    miss = np.flatnonzero(part.isna().to_numpy() | (part.astype(str).str.strip() == "").to_numpy())
    if miss.size:
        raise InvariantViolation(int(miss[0]) + 1, "missing participant id")
    arm = frame[schema.arm].astype(str).str.strip().to_numpy(dtype=object)
    if schema.control_label != CONTROL:
        arm = np.where(arm == schema.control_label, CONTROL, arm)
    arms = list(prob)
    rand_prob = np.column_stack([_numeric(frame, prob[a], allow_missing=True) for a in arms])
    return MrtDataset(
        participant=part.astype(str).str.strip().to_numpy(dtype=object),
        t=_numeric(frame, schema.t, allow_missing=False),
        available=_numeric(frame, schema.available, allow_missing=False),
        arm=arm,
        rand_prob=rand_prob,
        outcome=_numeric(frame, schema.outcome, allow_missing=True),
        covariates={c: _numeric(frame, c, allow_missing=True) for c in covariates},
        arms=arms,
        eps=eps,
    )


def load_csv(path, schema: Schema | None = None, *, eps: float = DEFAULT_EPS) -> MrtDataset:
    """Read and validate a UTF-8 CSV with a header row."""
    frame = pd.read_csv(Path(path), dtype=str, keep_default_na=False, na_values=[""],
                        encoding="utf-8")
    return from_frame(frame, schema, eps=eps)


def write_csv(dataset: MrtDataset, path) -> None:
    """Write ``dataset`` with canonical column names (readable by
    :func:`load_csv` with the default schema)."""
    dataset.to_frame().to_csv(Path(path), index=False)


# -- transforms ---------------------------------------------------------------


def log_transform(dataset: MrtDataset, column: str, offset: float = 0.5) -> MrtDataset:
    """Replace ``column`` by ``log(value + offset)``.

    Works on a covariate or on ``outcome``; missing outcomes on unavailable
    rows stay missing.
    """
    if not offset > 0:
        raise InputError("offset must be positive")
    if column != "outcome" and column not in dataset.covariates:
        raise UnknownColumn(column)
    values = dataset.column(column)
    neg = np.flatnonzero(values < 0)
    if neg.size:
        k = int(neg[0])
        raise NegativeValue(k + 1, column, float(values[k]))
    out = np.log(values + offset)
    if column == "outcome":
        return dataset._replace(outcome=out)
    return dataset.with_covariate(column, out)


def derive_lag(dataset: MrtDataset, source: str, lag: int = 1, fill: float = 0.0,
               name: str | None = None) -> MrtDataset:
    """Add covariate ``name`` equal to ``source`` at decision point ``t - lag``
    of the same participant.

    ``fill`` is used when ``t - lag < 1``, when that decision point has no
    row, or when the lagged source value is missing (an unavailable row's
    outcome).
    """
    if int(lag) != lag or lag < 1:
        raise InputError("lag must be a positive integer")
    lag = int(lag)
    src = dataset.column(source)
    name = name or f"{source}_lag{lag}"
    if name in dataset.covariates or name in ("t", "available", "outcome"):
        raise InputError(f"column {name!r} already exists")
    stride = dataset.T + 1
    key = dataset.participant_index * stride + dataset.t
    want = dataset.participant_index * stride + (dataset.t - lag)
    pos = np.searchsorted(key, want)
    pos_c = np.minimum(pos, len(key) - 1)
    hit = (dataset.t - lag >= 1) & (key[pos_c] == want)
    out = np.full(len(dataset), float(fill))
    out[hit] = src[pos_c[hit]]
    out[~np.isfinite(out)] = float(fill)
    return dataset.with_covariate(name, out)


__all__ = [
    "CONTROL", "DEFAULT_EPS", "MrtDataset", "MrtRow", "Schema", "derive_lag",
    "from_frame", "load_csv", "log_transform", "write_csv",
]
