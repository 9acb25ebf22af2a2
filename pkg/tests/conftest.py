import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


class Criterion:
    """Collects the checks of one acceptance criterion and its runtime against a budget."""

    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.failures, self.notes = [], []

    def check(self, ok, detail):
        self.notes.append(detail)
        if not ok:
            self.failures.append(detail)
        return ok

    def note(self, detail):
        self.notes.append(detail)


@pytest.fixture
def criterion():
    """Context manager: ``with criterion(3, "title", budget_s) as c: c.check(ok, detail)``.

    On exit it records one PASS/FAIL line, printed after the run, and fails the
    test if any check failed or the budget was exceeded.
    """
    import contextlib
    import time

    @contextlib.contextmanager
    def run(number, title, budget):
        c = Criterion(number, title, budget)
        start = time.perf_counter()
        error = None
        try:
            yield c
        except Exception as exc:  # recorded, then re-raised below
            error = exc
        elapsed = time.perf_counter() - start
        if error is not None:
            c.failures.append(f"error: {error!r}")
        c.check(elapsed < budget, f"runtime {elapsed:.1f}s (budget {budget}s)")
        status = "PASS" if not c.failures else "FAIL"
        _CRITERIA[number] = f"criterion {number} {status}: {title} | " + "; ".join(c.notes)
        print(_CRITERIA[number])
        if error is not None:
            raise error
        assert not c.failures, "; ".join(c.failures)

    return run


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
