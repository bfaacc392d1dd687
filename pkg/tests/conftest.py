import functools

import pytest
from hypothesis import HealthCheck, settings

from openwdvv.catalog import builtin
from openwdvv.pipeline import run_checks

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def pipeline_result(ident: str):
    """Full pipeline run of a built-in at its recommended truncation (cached per session)."""
    return run_checks(builtin(ident).spec)


@pytest.fixture(scope="session")
def run_builtin():
    return pipeline_result


#: criterion number -> summary line, filled by test_acceptance
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
