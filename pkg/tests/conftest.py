import numpy as np
import pytest

from fairmask import Dataset

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, label): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, label = mark.args
    if report.when == "call" or (report.when == "setup" and report.skipped):
        status = "SKIP" if report.skipped else ("PASS" if report.passed else "FAIL")
        _CRITERIA[number] = (status, label)
    elif report.failed:
        _CRITERIA[number] = ("FAIL", label)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, label = _CRITERIA[number]
        terminalreporter.write_line(f"{status}  criterion {number:>2}: {label}")


def make_dataset(n=40, d=4, sensitive=(0,), seed=0, labels=None):
    """Random Gaussian features with binary sensitive columns."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    for j in sensitive:
        X[:, j] = rng.integers(0, 2, n)
    if labels is None:
        labels = (X[:, -1] + 0.5 * rng.standard_normal(n) > 0).astype(int)
    return Dataset(X, labels, sensitive_index=sensitive, mask_values=(0.0,) * len(sensitive))
