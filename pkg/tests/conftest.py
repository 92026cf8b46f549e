import numpy as np
import pytest

from mrtwcls.dataset import CONTROL, MrtDataset


def make_dataset(n, T, *, seed=0, arms=("treatment",), avail_rate=0.8, varying_p=True,
                 ragged=False):
    """Small random trial with mixed availability and row-varying probabilities."""
    rng = np.random.default_rng(seed)
    part, tt, av, arm, probs, y, x, z = [], [], [], [], [], [], [], []
    K = len(arms)
    for i in range(n):
        Ti = int(rng.integers(max(1, T - 2), T + 1)) if ragged else T
        for t in range(1, Ti + 1):
            a = int(rng.random() < avail_rate)
            if varying_p:
                p = rng.uniform(0.15, 0.8 / K, size=K) if K > 1 else rng.uniform(0.2, 0.8, size=1)
            else:
                p = np.full(K, 0.5 if K == 1 else 0.3)
            if a:
                k = rng.choice(K + 1, p=np.r_[p, 1 - p.sum()])
                lab = arms[k] if k < K else CONTROL
            else:
                lab = CONTROL
            part.append(f"p{i}")
            tt.append(t)
            av.append(a)
            arm.append(lab)
            probs.append(p)
            x.append(rng.normal())
            z.append(float(rng.integers(0, 2)))
            y.append(rng.normal() + 0.5 * x[-1] + (0.7 if lab != CONTROL else 0.0) if a else
                     (rng.normal() if rng.random() < 0.5 else np.nan))
    return MrtDataset(participant=np.array(part, dtype=object), t=np.array(tt), available=np.array(av),
                      arm=np.array(arm, dtype=object), rand_prob=np.array(probs),
                      outcome=np.array(y), covariates={"x": np.array(x), "z": np.array(z)},
                      arms=list(arms))


@pytest.fixture
def toy_two():
    """Two participants, one decision point each (treated Y=2, untreated Y=0)."""
    return MrtDataset(participant=np.array(["a", "b"], dtype=object), t=np.array([1, 1]),
                      available=np.array([1, 1]), arm=np.array(["treatment", CONTROL], dtype=object),
                      rand_prob=np.array([[0.5], [0.5]]), outcome=np.array([2.0, 0.0]),
                      covariates={}, arms=["treatment"])


@pytest.fixture
def small_data():
    return make_dataset(8, 5, seed=1)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES.append(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
