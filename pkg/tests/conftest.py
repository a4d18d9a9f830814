import sys

import pytest

from bpm_eval.synth import build_anticorrelated_pair, build_gt_triplet_set


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in results:
        terminalreporter.write_line(f"{verdict}: {name}")


@pytest.fixture(scope="session")
def gt_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("gt_set")
    return build_gt_triplet_set(root, n=50)


@pytest.fixture(scope="session")
def alpha_set(tmp_path_factory):
    root = tmp_path_factory.mktemp("alpha_set")
    return build_anticorrelated_pair(root)
