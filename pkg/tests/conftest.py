import json
from pathlib import Path

import numpy as np
import pytest

from gammabsde.geometry import load_domain

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def load_fixture_domain(name):
    return load_domain((FIXTURES / f"{name}.json").read_text())


def fixture_text(name):
    return (FIXTURES / name).read_text()


@pytest.fixture(scope="session")
def square():
    return load_fixture_domain("square")


@pytest.fixture(scope="session")
def lshape():
    return load_fixture_domain("lshape")


@pytest.fixture(scope="session")
def ushape():
    return load_fixture_domain("ushape")


@pytest.fixture(scope="session")
def spiral():
    return load_fixture_domain("spiral")


@pytest.fixture(scope="session")
def blob64():
    return load_fixture_domain("blob64")


@pytest.fixture(scope="session")
def all_domains(square, lshape, ushape, spiral, blob64):
    return [square, lshape, ushape, spiral, blob64]


def two_arm_terminal(w):
    """Binary terminal: one arm tip per sign of the driving state."""
    return np.array([1.9, 0.5]) if w[0] > 0 else np.array([0.5, 1.9])


@pytest.fixture(scope="session")
def two_arm_scenario():
    from gammabsde.bsde import load_scenario

    return load_scenario(fixture_text("two_arm.json"))


@pytest.fixture(scope="session")
def zdep_scenario():
    from gammabsde.bsde import load_scenario

    return load_scenario(fixture_text("two_arm_zdep.json"))
