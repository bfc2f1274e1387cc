import pathlib

import pytest

from neuralvmc import system
from neuralvmc.network import NetworkHyperparams

CONFIG_DIR = pathlib.Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def h_atom() -> system.Molecule:
    return system.load_molecule(CONFIG_DIR / "h_atom.toml")


@pytest.fixture(scope="session")
def h2() -> system.Molecule:
    return system.load_molecule(CONFIG_DIR / "h2.toml")


@pytest.fixture(scope="session")
def lih() -> system.Molecule:
    return system.load_molecule(CONFIG_DIR / "lih.toml")


@pytest.fixture(scope="session")
def small_hp() -> NetworkHyperparams:
    """Desk-scale architecture; keeps randomized sweeps fast."""
    return NetworkHyperparams(n_layers=2, width_one=16, width_two=8, n_det=2)
