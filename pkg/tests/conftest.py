import numpy as np
import pytest


def random_spd(rng, p, cond_shift=0.5):
    a = rng.standard_normal((p, p))
    m = a @ a.T / p + cond_shift * np.eye(p)
    return 0.5 * (m + m.T)


def random_covariance(rng, p, n):
    x = rng.standard_normal((n, p)) @ np.linalg.cholesky(random_spd(rng, p)).T
    x = x - x.mean(axis=0)
    s = x.T @ x / n
    return 0.5 * (s + s.T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    """Record one acceptance line; the terminal summary prints them all."""
    line = f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
