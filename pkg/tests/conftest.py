import numpy as np
import pytest

from annak.isccore import TimeSeriesPanel


def make_panel(data, runs=None, run_length=None, usable=None):
    """Panel from ``{subject: region x time}`` arrays holding all runs.

    ``runs`` labels the runs (equal length); ``usable`` maps subjects to the
    runs kept, the rest are cut from the series.
    """
    subjects = list(data)
    first = np.asarray(data[subjects[0]])
    runs = list(runs or ["1"])
    run_length = run_length or first.shape[1] // len(runs)
    labels = np.repeat(np.array(runs), run_length)
    usable = usable or {}
    series, index, keep_runs = {}, {}, {}
    for s in subjects:
        keep = set(usable.get(s, runs))
        mask = np.isin(labels, list(keep))
        series[s] = np.asarray(data[s], dtype=float)[:, mask]
        index[s] = labels[mask]
        keep_runs[s] = keep
    regions = [f"r{i}" for i in range(first.shape[0])]
    return TimeSeriesPanel(subjects, regions, series, index, keep_runs, {r: run_length for r in runs})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: int, ok: bool, detail: str) -> bool:
    """Print and remember one pass/fail line for an acceptance criterion."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
