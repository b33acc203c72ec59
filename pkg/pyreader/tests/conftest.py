from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).parent.parent.parent
GOLDEN_DIR = REPO_ROOT / "fixtures" / "golden"
MALFORMED_DIR = REPO_ROOT / "fixtures" / "malformed"


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN_DIR


@pytest.fixture(scope="session")
def malformed_dir() -> Path:
    return MALFORMED_DIR
