import pytest

CRITERIA = {
    1: "pipeline counts",
    2: "decomposition identity",
    3: "KL oracles",
    4: "flow correctness",
    5: "flipout contract",
    6: "gradient checks",
    7: "calibration recovery",
    8: "causality",
    9: "desk-scale end-to-end",
    10: "VIX bracket (optional)",
}


def pytest_configure(config):
    config._acceptance = {}


@pytest.fixture
def acceptance(request):
    """Record one (criterion, ok, detail) result; several parts may share a criterion."""
    store = request.config._acceptance

    def record(number, ok, detail=""):
        store.setdefault(number, []).append((bool(ok), detail))
        print(f"criterion {number} ({CRITERIA[number]}): {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config._acceptance
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in CRITERIA.items():
        parts = store.get(number)
        if parts is None:
            status, detail = "SKIP", "not run"
        else:
            status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
            detail = "; ".join(d for _, d in parts if d)
        terminalreporter.write_line(f"[{status}] {number:>2}. {name}: {detail}")
