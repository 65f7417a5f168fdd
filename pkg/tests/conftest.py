import pytest
from hypothesis import HealthCheck, settings

from agingpa.model import AffineWeights, ExponentialAging, ExponentialFitness, ProcessSpec

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def stationary_spec():
    return ProcessSpec(AffineWeights(1.0, 1.0))


@pytest.fixture
def aging_spec():
    return ProcessSpec(AffineWeights(1.0, 1.0), ExponentialAging(1.0))


@pytest.fixture
def expfit_spec():
    return ProcessSpec(AffineWeights(1.0, 1.0), ExponentialAging(1.0), ExponentialFitness(1.5))


@pytest.fixture
def acceptance():
    """Record a criterion's checks as one PASS/FAIL line, then assert them."""
    def record(number, title, checks):
        ok = all(c[2] for c in checks)
        detail = "; ".join(f"{name}={value}" for name, value, _ in checks)
        ACCEPTANCE_LINES.append(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        failed = [c for c in checks if not c[2]]
        assert not failed, failed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
