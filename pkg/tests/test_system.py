import numpy as np
import pytest

from neuralvmc import system
from neuralvmc.system import Molecule, Nucleus

LIH_CONFIG = """
[molecule]
name = "LiH"
units = "bohr"
n_up = 2
n_down = 2

[[molecule.nuclei]]
symbol = "Li"
charge = 3
position = [0.0, 0.0, 0.0]

[[molecule.nuclei]]
symbol = "H"
charge = 1
position = [0.0, 0.0, 3.015]
"""


class TestParseMolecule:
    def test_lih(self):
        mol = system.parse_molecule(LIH_CONFIG)
        assert mol.n_electrons == 4
        assert mol.name == "LiH"
        np.testing.assert_array_equal(mol.charges, [3, 1])
        np.testing.assert_allclose(mol.positions[1], [0.0, 0.0, 3.015])

    def test_single_hydrogen(self):
        text = """
        [molecule]
        n_up = 1
        n_down = 0
        [[molecule.nuclei]]
        charge = 1
        position = [0.0, 0.0, 0.0]
        """
        mol = system.parse_molecule(text)
        assert mol.n_electrons == 1
        assert mol.spins == (1, 0)

    def test_angstrom_conversion(self):
        text = """
        [molecule]
        units = "angstrom"
        n_up = 1
        n_down = 1
        [[molecule.nuclei]]
        charge = 1
        position = [0.0, 0.0, 0.0]
        [[molecule.nuclei]]
        charge = 1
        position = [0.0, 0.0, 0.7414]
        """
        mol = system.parse_molecule(text)
        np.testing.assert_allclose(mol.positions[1, 2], 0.7414 / 0.529177210903, rtol=1e-12)

    def test_missing_n_up_errors(self):
        bad = LIH_CONFIG.replace("n_up = 2", "")
        with pytest.raises(ValueError, match="n_up"):
            system.parse_molecule(bad)

    def test_malformed_text_errors(self):
        with pytest.raises(ValueError):
            system.parse_molecule("[molecule\nn_up = ")

    def test_non_positive_charge_errors(self):
        with pytest.raises(ValueError, match="charge"):
            system.parse_molecule(LIH_CONFIG.replace("charge = 3", "charge = 0"))

    def test_bad_units_error(self):
        with pytest.raises(ValueError, match="units"):
            system.parse_molecule(LIH_CONFIG.replace('"bohr"', '"nm"'))

    def test_round_trip_identity(self):
        mol = system.parse_molecule(LIH_CONFIG)
        again = system.parse_molecule(system.serialize_molecule(mol))
        assert mol == again

    def test_round_trip_awkward_floats(self):
        mol = Molecule(
            nuclei=(Nucleus("X", 7, (0.1 + 0.2, -1.0 / 3.0, 1e-17)),),
            n_up=4,
            n_down=3,
        )
        assert system.parse_molecule(system.serialize_molecule(mol)) == mol


class TestMoleculeInvariants:
    def test_spin_convention(self):
        with pytest.raises(ValueError, match="n_up >= n_down"):
            Molecule(nuclei=(Nucleus("H", 1, (0, 0, 0)),), n_up=0, n_down=1)

    def test_at_least_one_electron(self):
        with pytest.raises(ValueError, match="electron"):
            Molecule(nuclei=(Nucleus("H", 1, (0, 0, 0)),), n_up=0, n_down=0)

    def test_non_finite_position(self):
        with pytest.raises(ValueError, match="finite"):
            Nucleus("H", 1, (0.0, float("nan"), 0.0))


class TestNuclearRepulsion:
    def test_single_nucleus_is_zero(self, h_atom):
        assert system.nuclear_repulsion(h_atom) == 0.0

    def test_h2_at_1p4(self):
        mol = Molecule(
            nuclei=(Nucleus("H", 1, (0, 0, 0)), Nucleus("H", 1, (0, 0, 1.4))),
            n_up=1,
            n_down=1,
        )
        np.testing.assert_allclose(system.nuclear_repulsion(mol), 1.0 / 1.4, rtol=1e-12)

    def test_lih(self, lih):
        np.testing.assert_allclose(system.nuclear_repulsion(lih), 3.0 / 3.015, rtol=1e-12)

    def test_coincident_nuclei_error(self):
        mol = Molecule(
            nuclei=(Nucleus("H", 1, (0, 0, 0)), Nucleus("H", 1, (0, 0, 0))),
            n_up=1,
            n_down=1,
        )
        with pytest.raises(ValueError, match="coincide"):
            system.nuclear_repulsion(mol)

    def test_rigid_motion_invariance(self, lih):
        base = system.nuclear_repulsion(lih)
        rng = np.random.default_rng(11)
        for _ in range(20):
            rot, _ = np.linalg.qr(rng.standard_normal((3, 3)))
            shift = 10 * rng.standard_normal(3)
            moved = Molecule(
                nuclei=tuple(
                    Nucleus(n.symbol, n.charge, tuple(rot @ np.array(n.position) + shift))
                    for n in lih.nuclei
                ),
                n_up=lih.n_up,
                n_down=lih.n_down,
            )
            assert abs(system.nuclear_repulsion(moved) - base) / base < 1e-12


class TestInitWalkers:
    def test_shape_and_determinism(self, h_atom):
        a = system.init_walkers(h_atom, 4, seed=7)
        b = system.init_walkers(h_atom, 4, seed=7)
        assert a.shape == (4, 1, 3)
        assert np.all(np.isfinite(a))
        np.testing.assert_array_equal(np.asarray(a), np.asarray(b))

    def test_seeds_differ(self, h_atom):
        a = system.init_walkers(h_atom, 4, seed=7)
        c = system.init_walkers(h_atom, 4, seed=8)
        assert np.any(np.asarray(a) != np.asarray(c))

    def test_lih_charge_weighted_assignment(self, lih):
        # 3 electrons should scatter around Li, 1 around H; with unit noise
        # the per-electron batch means sit close to the assigned nucleus.
        walkers = np.asarray(system.init_walkers(lih, 2000, seed=0))
        assert walkers.shape == (2000, 4, 3)
        centers = walkers.mean(axis=0)
        li, h = lih.positions
        np.testing.assert_allclose(centers[0], li, atol=0.1)
        np.testing.assert_allclose(centers[1], li, atol=0.1)
        np.testing.assert_allclose(centers[2], li, atol=0.1)
        np.testing.assert_allclose(centers[3], h, atol=0.1)

    def test_zero_batch_errors(self, h_atom):
        with pytest.raises(ValueError, match="batch_size"):
            system.init_walkers(h_atom, 0, seed=0)
