import numpy as np
import pytest

from bdsde.markspace import DiscreteMeasureSpace, discretize_measure, power_density, truncate_measure, uniform_density

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for n, text in getattr(report, "criterion", ()):
        prev = _CRITERIA.get(n, (text, True))
        _CRITERIA[n] = (text, prev[1] and report.outcome == "passed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    rep.criterion = [(m.args[0], m.args[1]) for m in item.iter_markers("criterion")]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        text, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")


def empty_spaces():
    e = DiscreteMeasureSpace.empty()
    return dict(E=e, U0=e, U1=e, F=e)


@pytest.fixture
def no_marks():
    return empty_spaces()


def suite_spaces():
    """One white-noise atom, two-atom jump spaces and a truncated power law on F."""
    return dict(
        E=DiscreteMeasureSpace.from_atoms([("e", 0.5, 1.0)]),
        U0=discretize_measure(uniform_density(), (0.0, 1.0), 2),
        U1=discretize_measure(uniform_density(0.5), (0.0, 1.0), 2),
        F=truncate_measure(power_density(-2.0), (0.0, np.inf), 2, 2),
    )


@pytest.fixture
def marks():
    return suite_spaces()
