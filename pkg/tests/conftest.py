import numpy as np
import pandas as pd
import pytest

from gridcast.calendar import HolidayCalendar, build_feature_matrix
from gridcast.ingest import HourlyDataset, prepare
from gridcast.synthetic import make_synthetic_dataset


@pytest.fixture
def small_dataset():
    return make_synthetic_dataset(n_clients=3, n_days=20, seed=1)


@pytest.fixture
def prepared(small_dataset):
    split, params = prepare(small_dataset)
    features = build_feature_matrix(small_dataset.timestamps, HolidayCalendar.for_region("Custom"))
    return split, params, features


def hourly(values, start="2013-01-07"):
    values = np.asarray(values, dtype=float)
    index = pd.date_range(start, periods=len(values), freq="h")
    return HourlyDataset(values, index, [f"c{i}" for i in range(values.shape[1])])


# --------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion at the end of the run

_ACCEPTANCE = {}


@pytest.fixture
def detail(request):
    """Tests call ``detail(text)`` to attach a one-line result description."""
    def record(text):
        request.node.stash_detail = text
        print(text)
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    n, title = mark.args
    text = getattr(item, "stash_detail", "")
    if rep.failed and not text:
        text = str(call.excinfo.value).splitlines()[0] if call.excinfo else "error"
    _ACCEPTANCE[n] = ("PASS" if rep.passed else "FAIL", title, text)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        status, title, text = _ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] {n}. {title}: {text}")
