import numpy as np
import pytest

from ldflow.model import DiscretizedSpace, RateModel, make_phonon_instance

ACCEPTANCE_LINES: list[str] = []


def random_model(rng: np.random.Generator, n: int, r_lo: float = 0.2, r_hi: float = 2.0):
    space = DiscretizedSpace.uniform(n)
    P = rng.uniform(0.3, 2.0, (n, n))
    P /= (P * space.lambda_weights).sum(axis=1, keepdims=True)
    return RateModel(space, rng.uniform(r_lo, r_hi, n), P)


def random_balanced_flow(rng: np.random.Generator, n: int, scale: float = 1.0):
    """Symmetric part plus a random cycle: positive with equal marginals."""
    S = rng.exponential(size=(n, n))
    Q = S + S.T
    perm = rng.permutation(n)
    c = rng.uniform(0, 1)
    for a, b in zip(perm, np.roll(perm, -1)):
        Q[a, b] += c
    return scale * Q


@pytest.fixture(scope="session")
def phonon():
    return make_phonon_instance()


@pytest.fixture(scope="session")
def phonon_uniform():
    """Uniform side cells and a visible zero cell, for absorption tests."""
    return make_phonon_instance(64, 0.5, min_width=None, zero_width=1e-2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
