import time

import pytest

from bilevel_ds.bench.experiment import ExperimentConfig, run_experiment

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def default_experiment(tmp_path_factory):
    """The full default benchmark, run once and shared (written to disk too)."""
    out = tmp_path_factory.mktemp("bench")
    t0 = time.perf_counter()
    res = run_experiment(ExperimentConfig(), out_dir=out)
    res.elapsed = time.perf_counter() - t0
    res.out_dir = out
    return res


@pytest.fixture
def acceptance_report():
    def report(number, name, passed, detail=""):
        line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {name}  {detail}".rstrip()
        print(line)
        ACCEPTANCE_LINES.append((number, line))
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
