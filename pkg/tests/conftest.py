import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from facecascade.synth import synth_faces  # noqa: E402


@pytest.fixture(scope="session")
def small_faces():
    """A 4-subject prior with 300 vertices and 20 landmarks, one expression each."""
    return synth_faces(4, n=300, l=20, expressions_per_subject=1, seed=7)


@pytest.fixture(scope="session")
def face68():
    return synth_faces(3, n=1200, l=68, expressions_per_subject=1, seed=3)


@pytest.fixture
def data_dir():
    return Path(__file__).parent / "data"


ACCEPT_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion and assert it."""
    lines = request.config.stash.setdefault(ACCEPT_KEY, [])

    def report(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPT_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
