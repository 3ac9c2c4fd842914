from pathlib import Path

import pytest

from crowdverify.policy import parse_hints, parse_meta

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text() if name else ""


@pytest.fixture(scope="session")
def meta_w8():
    return parse_meta(fixture_text("meta_w8.meta"))


@pytest.fixture(scope="session")
def meta64():
    return parse_meta(fixture_text("meta64.meta"))


def hints(name: str):
    return parse_hints(fixture_text(name))
