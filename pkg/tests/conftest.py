import os

import pytest

from loptlib import oracles

def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the full-size training and acceptance tests")

def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size runs, skipped unless --runslow")

def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)

FIXTURE_PATH = os.path.join(os.path.dirname(__file__), "data", "oracles.yaml")

@pytest.fixture(scope="session")
def oracle_fixture():
    """committed oracle records and thresholds, see data/FIXTURES.md"""
    return oracles.OracleStore(FIXTURE_PATH)
