from __future__ import annotations

import numpy as np
import pytest

from def_inference.model_core import Dataset


def random_dataset(rng: np.random.Generator, n: int, p: int) -> Dataset:
    z = rng.standard_normal((n, p))
    x = z @ rng.standard_normal(p) * 0.5 + rng.standard_normal(n)
    y = z @ rng.standard_normal(p) * 0.5 + 0.3 * x + rng.standard_normal(n)
    return Dataset(y, x, z)


@pytest.fixture
def gen() -> np.random.Generator:
    return np.random.default_rng(20240521)


def sparse_linear(rng: np.random.Generator, n: int = 80, p: int = 120, s: int = 3, theta: float = 0.0) -> Dataset:
    z = rng.standard_normal((n, p))
    bx = np.zeros(p)
    by = np.zeros(p)
    bx[:s] = 1.0
    by[s : 2 * s] = 1.0
    x = z @ bx + rng.standard_normal(n)
    y = theta * x + z @ by + rng.standard_normal(n)
    return Dataset(y, x, z)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
