import pathlib

import pytest

PROGRAMS = pathlib.Path(__file__).resolve().parent.parent / "programs"


def load(name: str) -> str:
    return (PROGRAMS / f"{name}.w").read_text()


@pytest.fixture(scope="session")
def programs_dir() -> pathlib.Path:
    return PROGRAMS
