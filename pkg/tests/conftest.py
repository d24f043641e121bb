import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from xferlaw.pipeline import run_pipeline  # noqa: E402
from xferlaw.synth import GroundTruth, generate  # noqa: E402


@pytest.fixture(scope="session")
def truth():
    return GroundTruth()


@pytest.fixture(scope="session")
def clean_runs(truth):
    return generate(truth)


@pytest.fixture(scope="session")
def clean_result(clean_runs):
    return run_pipeline(clean_runs)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
