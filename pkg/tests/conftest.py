import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # for the genrecords helper

REPO_ROOT = Path(__file__).parent.parent
DEFAULT_SIMSPEC = REPO_ROOT / "default.simspec"
FIXTURE_DIR = REPO_ROOT / "fixtures"
GOLDEN_DIR = FIXTURE_DIR / "golden"
MALFORMED_DIR = FIXTURE_DIR / "malformed"


@pytest.fixture(scope="session")
def default_simspec() -> Path:
    return DEFAULT_SIMSPEC


@pytest.fixture(scope="session")
def session_recording(tmp_path_factory) -> Path:
    """One 10 s, 100 Hz simulated recording shared across the suite."""
    from oxdr import ops

    path = tmp_path_factory.mktemp("shared") / "session.oxdr.ndjson"
    ops.record_simulated(DEFAULT_SIMSPEC, path, polling_rate_hz=100.0,
                         duration_s=10.0)
    return path


@pytest.fixture(scope="session")
def session_records(session_recording) -> list:
    from oxdr.codec import read_all

    return read_all(session_recording)
