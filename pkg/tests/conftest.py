import json
from datetime import datetime, timezone
from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"


def load_doc(name: str) -> dict:
    return json.loads((DATA / name).read_text())


def utc(*args) -> datetime:
    return datetime(*args, tzinfo=timezone.utc)


@pytest.fixture
def policy01_doc():
    return load_doc("policy01.json")


@pytest.fixture
def s001_doc():
    return load_doc("s001.json")


@pytest.fixture
def r001_doc():
    return load_doc("r001.json")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
