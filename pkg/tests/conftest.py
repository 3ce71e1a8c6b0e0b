import numpy as np
import pytest

from pacfl.config import load_config


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_config():
    return load_config()


@pytest.fixture(scope="session")
def small_config():
    """A short configuration that keeps environment tests fast."""
    return load_config({"rounds": 4, "episodes": 3, "warmup_episodes": 2, "batch_episodes": 2, "eval_episodes": 2})


ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request, capsys):
    """Record one PASS/FAIL line per criterion, show it live and in the summary."""

    def record(number: int, result, budget: float | None = None):
        within = budget is None or result.seconds < budget
        passed = result.passed and within
        limit = "" if budget is None else f" [budget {budget:.0f}s]"
        line = f"{'PASS' if passed else 'FAIL'} {number:>2} {result.line().split(' ', 1)[1]}{limit}"
        request.config.stash[ACCEPTANCE_LINES].append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert result.passed, line
        assert within, f"{line}: exceeded runtime budget"

    return record
