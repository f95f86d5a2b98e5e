import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------- acceptance criterion report

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): numbered acceptance criterion")
    config.criteria = {}  # n -> [title, passed, details]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    n, title = marker.args
    entry = item.config.criteria.setdefault(n, [title, True, []])
    entry[1] = entry[1] and rep.passed
    entry[2] += [v for k, v in item.user_properties if k == "detail" and v not in entry[2]]


def pytest_terminal_summary(terminalreporter, config):
    if not config.criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(config.criteria):
        title, ok, details = config.criteria[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}"
        if details:
            line += " | " + "; ".join(details)
        terminalreporter.write_line(line)
