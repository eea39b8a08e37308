from pathlib import Path

import pytest

from fedtwin.profiles import ProfileSchema

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = REPO_ROOT / "configs"


@pytest.fixture(scope="session")
def profile_schema() -> ProfileSchema:
    return ProfileSchema.load(CONFIG_DIR / "profile_schema.json")


@pytest.fixture(scope="session")
def config_dir() -> Path:
    return CONFIG_DIR
