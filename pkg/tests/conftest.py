"""Shared fixtures and path helpers for the test suite."""

from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
CORPUS_DIR = REPO_ROOT / "corpus"


def corpus_path(name: str) -> str:
    """Absolute path of a bundled scenario file."""
    path = CORPUS_DIR / name
    if not path.is_file():
        raise FileNotFoundError(path)
    return str(path)


def corpus_files() -> list[str]:
    """All bundled scenario files, sorted for stable iteration order."""
    return sorted(str(p) for p in CORPUS_DIR.glob("*.sc"))


@pytest.fixture()
def corpus_dir() -> Path:
    return CORPUS_DIR
