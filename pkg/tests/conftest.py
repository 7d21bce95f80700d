import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tpaudit.keyforge import DeviceIdentity, MinuteStamp  # noqa: E402
from tpaudit.workspace import init_workspace  # noqa: E402

NOW = MinuteStamp(29_000_000)
ADMIN = "admin-secret"
QUESTIONS = [("first pet", "rex"), ("birth city", "oslo"), ("school", "st. mary")]


@pytest.fixture
def identity():
    return DeviceIdentity("MB-9X72Q", "WD-ZX81", "s3cret!")


@pytest.fixture
def workspace(tmp_path):
    root = tmp_path / "ws"
    init_workspace(root, {"seed": 11, "admin_token": ADMIN}, today=NOW.epoch_minute // 1440)
    return root


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
