import pytest

# acceptance criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {cid:2d}  {detail}")


@pytest.fixture
def record():
    """record(cid, passed, detail): print a PASS/FAIL line and keep it for
    the terminal summary."""

    def _record(cid, passed, detail):
        ACCEPTANCE[cid] = (bool(passed), detail)
        print(f"{'PASS' if passed else 'FAIL'}  criterion {cid}  {detail}")
        return bool(passed)

    return _record
