"""Acceptance bookkeeping: one PASS/FAIL line per criterion at the end of the run."""

import pytest

CRITERIA = {
    "oracle": "Attention oracle equivalence (200 cases, n <= 32, 1e-9)",
    "gradients": "Gradient correctness (finite differences, >= 20 configs per op, rel < 1e-4)",
    "complexity": "Complexity exponents (dense in [1.8, 2.2], windowed in [0.9, 1.2])",
    "pipeline": "Pipeline algebra (reconstruction, a-identity, L=1, duplicate, shift, permutation)",
    "learning": "Learning sanity (train >= 0.95, held-out >= 0.80, untrained 0.20 +/- 0.05)",
    "metrics": "Metric oracle (5 hand scenarios exact, uniform loss = ln 5 within 1e-12)",
    "determinism": "Determinism (train/eval/bench reruns byte-match)",
}

_outcomes: dict[str, list[tuple[str, bool]]] = {}
_notes: dict[str, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion this test belongs to")


@pytest.fixture
def note(request):
    """Attach a measured value to the current test's criterion summary line."""
    marker = request.node.get_closest_marker("criterion")
    name = marker.args[0] if marker else "misc"
    return lambda text: _notes.setdefault(name, []).append(text)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        # an expected failure still counts as a failed criterion
        passed = report.outcome == "passed" and not hasattr(report, "wasxfail")
        _outcomes.setdefault(marker.args[0], []).append((item.name, passed))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for key, title in CRITERIA.items():
        results = _outcomes.get(key)
        if results is None:
            continue
        ok = all(p for _, p in results)
        line = f"{'PASS' if ok else 'FAIL'}  {title}"
        failed = [n for n, p in results if not p]
        if failed:
            line += f"  [failing: {', '.join(failed)}]"
        terminalreporter.write_line(line)
        for text in _notes.get(key, []):
            terminalreporter.write_line(f"      {text}")
