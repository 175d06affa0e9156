from __future__ import annotations

import pytest

from nada.simnet.scenario import bundled_scenarios, load_config, run_scenario


@pytest.fixture(scope="session")
def reference_config():
    return load_config(bundled_scenarios()["reference"])


@pytest.fixture(scope="session")
def reference_run(reference_config):
    return run_scenario(reference_config)


@pytest.fixture
def fresh_reference(reference_config):
    """A run nobody else has mutated."""
    return run_scenario(reference_config)


def pytest_terminal_summary(terminalreporter):
    from .oracles import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, ok, detail = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n} {title}: {'PASS' if ok else 'FAIL'} ({detail})")
