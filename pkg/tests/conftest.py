ACCEPTANCE = {}


def record(number, ok, detail):
    """Store one acceptance outcome; printed in the terminal summary."""
    ACCEPTANCE.setdefault(number, []).append((bool(ok), detail))
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        runs = ACCEPTANCE[number]
        ok = all(r[0] for r in runs)
        detail = "; ".join(r[1] for r in runs)
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
