from __future__ import annotations

import numpy as np
import pytest

from twincert.fixtures import linear_network, toy_network, unit_box
from twincert.model import save_domain, save_network


@pytest.fixture
def toy():
    return toy_network()


@pytest.fixture
def linear():
    return linear_network()


@pytest.fixture
def unit2():
    return unit_box(2)


@pytest.fixture
def toy_files(tmp_path, toy, linear, unit2):
    """toy.json, linear.json and unit2.json written to a temporary directory."""
    save_network(toy, tmp_path / "toy.json")
    save_network(linear, tmp_path / "linear.json")
    save_domain(unit2, tmp_path / "unit2.json")
    return tmp_path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
