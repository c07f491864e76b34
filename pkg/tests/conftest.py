import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def hadamard4():
    H = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], dtype=float)
    return H / 2.0


def polar_via_eigh(M):
    """Independent polar factor M (M^T M)^{-1/2} through a symmetric eigendecomposition."""
    if M.shape[0] < M.shape[1]:
        return polar_via_eigh(M.T).T
    w, E = np.linalg.eigh(M.T @ M)
    return M @ (E / np.sqrt(w)) @ E.T


_ACCEPTANCE = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _ACCEPTANCE[item.nodeid] = {"id": mark.args[0], "title": mark.args[1], "outcome": None}


def pytest_runtest_logreport(report):
    entry = _ACCEPTANCE.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        entry["outcome"] = report.outcome
        entry["detail"] = dict(report.user_properties).get("detail", "")
        entry["duration"] = report.duration


def pytest_terminal_summary(terminalreporter):
    ran = [e for e in _ACCEPTANCE.values() if e["outcome"] is not None]
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for e in sorted(ran, key=lambda e: int(e["id"][2:])):
        verdict = "PASS" if e["outcome"] == "passed" else "FAIL"
        terminalreporter.write_line(
            f"{verdict}  {e['id']:<5} {e['title']:<34} {e['duration']:7.2f}s  {e['detail']}")
