import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def toy_regression(n, p, seed=0, signal=0.5):
    from predsel.core import Dataset, standardize

    r = np.random.default_rng(seed)
    X = r.standard_normal((n, p))
    w = np.zeros(p)
    w[: min(p, 3)] = signal
    y = 0.3 + X @ w + r.standard_normal(n)
    return standardize(Dataset(X, y))


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record and print one pass/fail line for an acceptance criterion."""
    def record(number, name, ok, detail=""):
        line = f"acceptance {number} {name}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        _VERDICTS.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
