import pytest

from pathwise_lab.partitions import PartitionSequence
from pathwise_lab.paths import ContinuousQV, GeometricPoisson, JumpDiffusion, PoissonJumps, UniformJumpLaw


@pytest.fixture(scope="session")
def p10():
    return PartitionSequence(1.0, max_level=10)


@pytest.fixture(scope="session")
def p12():
    return PartitionSequence(1.0, max_level=12)


@pytest.fixture(scope="session")
def p14():
    return PartitionSequence(1.0, max_level=14)


@pytest.fixture(scope="session")
def gbm():
    return ContinuousQV(100.0, 0.2)


@pytest.fixture(scope="session")
def geo_poisson():
    return GeometricPoisson(100.0, 0.05, -0.1, PoissonJumps(2.0))


@pytest.fixture(scope="session")
def jump_diffusion():
    return JumpDiffusion(100.0, 0.0, 0.2, UniformJumpLaw(-0.2, 0.2), PoissonJumps(3.0))


def rel(a, b):
    return abs(a - b) / abs(b)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""

    def record(number: int, name: str, ok: bool, detail: str, elapsed: float, budget: float):
        in_time = elapsed < budget
        line = (f"[{'PASS' if ok and in_time else 'FAIL'}] criterion {number:2d} {name}: {detail}"
                f" ({elapsed:.1f}s, budget {budget:.0f}s)")
        _CRITERIA.append(line)
        print(line)
        assert ok, line
        assert in_time, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
