from __future__ import annotations

import itertools

import numpy as np
import pytest

from cestrade.participation import CostTable, build_cost_table
from cestrade.scenario import default_scenario, fixture_s1, hetero3_scenario

#: lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def s1():
    return fixture_s1()


@pytest.fixture(scope="session")
def s1_table(s1):
    return build_cost_table(s1)


@pytest.fixture(scope="session")
def hetero3():
    return hetero3_scenario()


@pytest.fixture(scope="session")
def hetero3_table(hetero3):
    return build_cost_table(hetero3)


@pytest.fixture(scope="session")
def default():
    return default_scenario()


@pytest.fixture(scope="session")
def default_table(default):
    return build_cost_table(default)


def random_table(rng: np.random.Generator, shape: tuple[int, ...], K: int = 4) -> CostTable:
    """Synthetic payoff table with arbitrary costs, for game-level tests."""
    I = len(shape)
    starts = [tuple(sorted(rng.choice(np.arange(1, K + 1), size=k, replace=False).tolist())) for k in shape]
    L = rng.uniform(0.1, 3.0, size=shape + (K,))
    return CostTable(
        participant_ids=tuple(range(1, I + 1)),
        starts=starts,
        U=rng.normal(size=shape + (I,)),
        R=rng.normal(size=shape),
        L=L,
        PAR=K * L.max(axis=-1) / L.sum(axis=-1),
    )


def random_mixed(rng: np.random.Generator, shape: tuple[int, ...]) -> list[np.ndarray]:
    return [rng.dirichlet(np.ones(k)) for k in shape]


def naive_expected(U_n, y, weights_for):
    """Full enumeration of sum_h U(h) prod_r weight_r(y_r(h_r))."""
    total = 0.0
    for idx in itertools.product(*(range(len(v)) for v in y)):
        prob = 1.0
        for r, j in enumerate(idx):
            prob *= weights_for(r, y[r][j])
        total += U_n[idx] * prob
    return total


def random_context(rng: np.random.Generator):
    """Slot game with 1..4 active users of mixed surplus sign and prices that often force clipping."""
    from cestrade.slot_game import SlotContext

    I = int(rng.integers(1, 5))
    s = rng.uniform(-3, 3, I)
    if I > 1 and np.all(s > 0) or np.all(s < 0):
        s[0] = -s[0]
    phi = float(rng.uniform(0.01, 1.0))
    return SlotContext(
        t=1,
        phi=phi,
        delta=float(rng.uniform(0, 0.5)),
        a=float(rng.uniform(-2, 2)),
        l_q=float(rng.uniform(-3, 3)),
        background=float(rng.uniform(0, 5)),
        s=s,
    )
