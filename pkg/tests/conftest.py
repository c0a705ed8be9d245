import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lqmfg.config import load_example
from lqmfg.model import GameModel

settings.register_profile(
    "default", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.filter_too_much],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ex2():
    return load_example("ex2").model


@pytest.fixture(scope="session")
def ex3():
    return load_example("ex3").model


@pytest.fixture(scope="session")
def ex4():
    return load_example("ex4").model


@pytest.fixture(scope="session")
def ex5():
    return load_example("ex5").model


@pytest.fixture(scope="session")
def ex6():
    return load_example("ex6").model


def random_model(rng: np.random.Generator, n: int, coupling: float = 0.5, T: float = None) -> GameModel:
    """Random admissible model with moderate coefficients (n1 = n2 = n)."""
    A = rng.uniform(-1.0, 1.0, (n, n))
    B = np.eye(n) + 0.3 * rng.uniform(-1.0, 1.0, (n, n))
    L = rng.uniform(-1.0, 1.0, (n, n))
    Q = L @ L.T + 0.2 * np.eye(n)
    Lf = rng.uniform(-1.0, 1.0, (n, n))
    Qf = 0.5 * Lf @ Lf.T
    return GameModel(
        A=A, B=B, Q=Q, R=np.eye(n), Qf=Qf,
        G=coupling * rng.uniform(-1.0, 1.0, (n, n)),
        Gamma=coupling * rng.uniform(-1.0, 1.0, (n, n)),
        Gammaf=coupling * rng.uniform(-1.0, 1.0, (n, n)),
        eta=rng.uniform(-1.0, 1.0, n), etaf=rng.uniform(-1.0, 1.0, n),
        D=0.3 * np.eye(n),
        T=float(rng.uniform(0.5, 3.0)) if T is None else T,
    )


# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
