from itertools import combinations

import numpy as np
import pytest

from dskernel.data import LabeledDataset, WishartSpec, make_rng, make_wishart_task, random_spd, sample_wishart
from dskernel.spd import make_spd


def rand_spd(rng, d, spread=1.0):
    return random_spd(rng, d, spread)


def rand_invertible(rng, d):
    while True:
        w = rng.standard_normal((d, d))
        if abs(np.linalg.det(w)) > 0.1:
            return w


def diag(*vals):
    return make_spd(np.diag(vals))


def random_pd(rng, l, ridge=0.1):
    f = rng.standard_normal((l, l + 2))
    return f @ f.T / l + ridge * np.eye(l)


def enumerate_faces(p_mat, c, y, rhs):
    """Best stationary point of c.x - x.P.x/2 with y.x = rhs over all supports with x >= 0."""
    n = c.size
    best, best_x = -np.inf, None
    for m in range(1, n + 1):
        for s in combinations(range(n), m):
            s = list(s)
            a = np.zeros((m + 1, m + 1))
            a[:m, :m] = p_mat[np.ix_(s, s)]
            a[:m, m] = y[s]
            a[m, :m] = y[s]
            try:
                sol = np.linalg.solve(a, np.append(c[s], rhs))
            except np.linalg.LinAlgError:
                continue
            if np.any(sol[:m] < -1e-12):
                continue
            x = np.zeros(n)
            x[s] = np.maximum(sol[:m], 0.0)
            v = c @ x - 0.5 * x @ p_mat @ x
            if v > best:
                best, best_x = v, x
    return best, best_x


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture(scope="session")
def small_task():
    """12-sample two-class Wishart set (d=4)."""
    return make_wishart_task(4, 12, 0.5, 6, seed=3)


@pytest.fixture(scope="session")
def three_class():
    """Three Wishart classes (d=3) with scales I, 3I and 9I, four samples each."""
    parts = [sample_wishart(WishartSpec(3, 10, s * np.eye(3)), 4, [7, i]) for i, s in enumerate((1, 3, 9))]
    return LabeledDataset(tuple(sum(parts, [])), np.repeat([1, 2, 3], 4))


ACCEPTANCE_LINES = []


def report(number: int, name: str, ok: bool, detail: str = "") -> bool:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
