"""
Shared fixtures.
"""
import pytest

from coded_backoff.models import build_run_config
from coded_backoff.services.channel import make_slot


@pytest.fixture
def make_config():
    """RunConfig factory with small defaults: kappa 16, batch of 50."""
    def factory(**overrides):
        values = {"kappa": 16, "seed": 3, "schedule": {"kind": "batch", "n": 50}}
        values.update(overrides)
        return build_run_config(**values)
    return factory


@pytest.fixture
def slots():
    """Build SlotRecords from (index, members) pairs."""
    def factory(pairs, kappa):
        return [make_slot(index, members, kappa) for index, members in pairs]
    return factory


@pytest.fixture
def write_file(tmp_path):
    def factory(name, text):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)
    return factory


@pytest.fixture
def staircase_trace(write_file):
    return write_file("slots.csv", "# staircase\n1,a;b;c\n2,b;c\n3,c\n")
