from importlib.resources import files

import pytest

from collocate.simulator import load_scenario


@pytest.fixture
def fixture_scenario():
    def load(name):
        return load_scenario(files("collocate") / "fixtures" / name)

    return load
