from hypothesis import HealthCheck, settings

# numba compiles on first call and the solver is not uniformly fast
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


# one PASS/FAIL line per acceptance criterion, printed after the run
_criteria: dict[str, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1].split("[")[0]
        number, _, label = name[len("test_criterion_"):].partition("_")
        passed = report.outcome == "passed" and _criteria.get(number, (None, True))[1]
        _criteria[number] = (label.replace("_", " "), passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria, key=int):
        label, passed = _criteria[number]
        terminalreporter.write_line(f"criterion {number} {label}: {'PASS' if passed else 'FAIL'}")
