import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def acceptance(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run summary."""
    store = request.config.stash.setdefault(_KEY, {})

    def record(criterion: str, passed: bool, detail: str = "") -> bool:
        store[criterion] = (bool(passed), detail)
        return bool(passed)

    return record


_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_KEY, {})
    if not store:
        return
    terminalreporter.write_sep("=", "acceptance criteria")

    def order(key):
        num = "".join(ch for ch in key if ch.isdigit())
        return int(num or 0), key

    for key in sorted(store, key=order):
        passed, detail = store[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
