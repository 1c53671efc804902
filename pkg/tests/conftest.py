import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from horoeq.fields import build_admissible_family, default_family_spec, default_observable  # noqa: E402
from horoeq.surface import build_bolza  # noqa: E402


@pytest.fixture(scope="session")
def bolza():
    return build_bolza()


@pytest.fixture(scope="session")
def family(bolza):
    return build_admissible_family(bolza, default_family_spec())


@pytest.fixture(scope="session")
def observable(bolza):
    return default_observable(bolza)


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, with the measured values each test attached."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props or rep.when != "call" and outcome != "error":
                continue
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((props["criterion"], f"criterion {props['criterion']:>2}: {status}  {props.get('summary', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
