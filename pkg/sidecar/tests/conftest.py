import sys


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_sidecar_conformance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("sidecar conformance")
    for name, verdict in results:
        terminalreporter.write_line(f"{verdict}: {name}")
