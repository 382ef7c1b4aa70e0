from pathlib import Path

import pytest

from seq2logic.data import preprocess_pairs, read_pairs

ROOT = Path(__file__).resolve().parents[1]
SAMPLE = ROOT / "data" / "geoquery_sample.tsv"
MAPPING = ROOT / "data" / "geoquery_s_mapping.tsv"

_ACCEPTANCE: list[str] = []


@pytest.fixture
def record():
    """Append a one-line acceptance verdict; all lines print at session end."""
    return _ACCEPTANCE.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def geo_pairs():
    return preprocess_pairs(read_pairs(SAMPLE))
