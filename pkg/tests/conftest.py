"""Collects the acceptance verdicts and prints them after the run."""

_VERDICTS = []


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        if hasattr(report, "wasxfail"):
            verdict = "FAIL (expected, see ledger)" if report.skipped else "PASS (unexpected)"
        else:
            verdict = "PASS" if report.passed else "FAIL"
        _VERDICTS.append((verdict, props["criterion"], props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for verdict, name, detail in _VERDICTS:
        terminalreporter.write_line(f"{verdict:28s} {name}" + (f"  [{detail}]" if detail else ""))
