import pytest

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, passed, detail):
    # a criterion checked by several tests passes only if all parts pass
    if number in ACCEPTANCE:
        prev_ok, prev_detail = ACCEPTANCE[number]
        ACCEPTANCE[number] = (prev_ok and bool(passed), f"{prev_detail}; {detail}")
    else:
        ACCEPTANCE[number] = (bool(passed), detail)
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return passed


@pytest.hookimpl(trylast=True)
def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
