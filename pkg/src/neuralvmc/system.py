"""Molecular system definition, config ingestion, and walker initialization.

All coordinates are stored in bohr and all energies in hartree, so the
kinetic and Coulomb operators carry no unit prefactors.
"""

from __future__ import annotations

import dataclasses
import math

import jax.numpy as jnp
import numpy as np

from . import _toml

ANGSTROM_PER_BOHR = 0.529177210903

# A batch of electron configurations, shape (batch, n_electrons, 3), bohr.
# Rows 0..n_up-1 are spin-up electrons, the remainder spin-down.
WalkerBatch = jnp.ndarray


@dataclasses.dataclass(frozen=True)
class Nucleus:
    symbol: str
    charge: int
    position: tuple[float, float, float]  # bohr

    def __post_init__(self):
        if int(self.charge) != self.charge or self.charge < 1:
            raise ValueError(f"nuclear charge must be a positive integer, got {self.charge}")
        if len(self.position) != 3 or not all(math.isfinite(x) for x in self.position):
            raise ValueError(f"nuclear position must be a finite 3-vector, got {self.position}")


@dataclasses.dataclass(frozen=True)
class Molecule:
    """Nuclei plus spin-resolved electron counts; defines the Hamiltonian.

    Spin assignment is positional: walker rows 0..n_up-1 are spin-up. The
    canonical ordering convention n_up >= n_down is enforced.
    """

    nuclei: tuple[Nucleus, ...]
    n_up: int
    n_down: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "nuclei", tuple(self.nuclei))
        if not self.nuclei:
            raise ValueError("molecule needs at least one nucleus")
        if self.n_up < 0 or self.n_down < 0 or self.n_up + self.n_down < 1:
            raise ValueError(f"need at least one electron, got n_up={self.n_up} n_down={self.n_down}")
        if self.n_up < self.n_down:
            raise ValueError(f"convention requires n_up >= n_down, got {self.n_up} < {self.n_down}")

    @property
    def n_electrons(self) -> int:
        return self.n_up + self.n_down

    @property
    def spins(self) -> tuple[int, int]:
        return (self.n_up, self.n_down)

    @property
    def positions(self) -> np.ndarray:
        """Nuclear positions, shape (n_nuclei, 3), bohr."""
        return np.array([n.position for n in self.nuclei], dtype=np.float64)

    @property
    def charges(self) -> np.ndarray:
        return np.array([n.charge for n in self.nuclei], dtype=np.float64)


def parse_molecule(config_text: str) -> Molecule:
    """Builds a Molecule from config text.

    Expected schema::

        [molecule]
        name = "LiH"            # optional
        units = "bohr"          # or "angstrom"; optional, default bohr
        n_up = 2
        n_down = 2

        [[molecule.nuclei]]
        symbol = "Li"           # optional
        charge = 3
        position = [0.0, 0.0, 0.0]

    Positions given in angstrom are converted to bohr.
    """
    data = _toml.parse(config_text)
    section = data.get("molecule")
    if not isinstance(section, dict):
        raise ValueError("config is missing the [molecule] section")

    units = section.get("units", "bohr")
    if units not in ("bohr", "angstrom"):
        raise ValueError(f"units must be 'bohr' or 'angstrom', got {units!r}")
    scale = 1.0 if units == "bohr" else 1.0 / ANGSTROM_PER_BOHR

    for key in ("n_up", "n_down"):
        if key not in section:
            raise ValueError(f"config is missing molecule.{key}")
        if not isinstance(section[key], int):
            raise ValueError(f"molecule.{key} must be an integer")

    raw_nuclei = section.get("nuclei")
    if not isinstance(raw_nuclei, list) or not raw_nuclei:
        raise ValueError("config needs at least one [[molecule.nuclei]] entry")

    nuclei = []
    for entry in raw_nuclei:
        if "charge" not in entry or "position" not in entry:
            raise ValueError("each nucleus needs 'charge' and 'position'")
        pos = entry["position"]
        if not isinstance(pos, list) or len(pos) != 3:
            raise ValueError(f"nuclear position must be [x, y, z], got {pos!r}")
        nuclei.append(
            Nucleus(
                symbol=str(entry.get("symbol", "")),
                charge=entry["charge"],
                position=tuple(float(x) * scale for x in pos),
            )
        )

    return Molecule(
        nuclei=tuple(nuclei),
        n_up=section["n_up"],
        n_down=section["n_down"],
        name=str(section.get("name", "")),
    )


def load_molecule(path) -> Molecule:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_molecule(fh.read())


def serialize_molecule(mol: Molecule) -> str:
    """Emits config text that parses back to an identical Molecule.

    Always writes bohr; float repr round-trips exactly.
    """
    lines = ["[molecule]"]
    if mol.name:
        lines.append(f'name = "{mol.name}"')
    lines.append('units = "bohr"')
    lines.append(f"n_up = {mol.n_up}")
    lines.append(f"n_down = {mol.n_down}")
    for nuc in mol.nuclei:
        lines.append("")
        lines.append("[[molecule.nuclei]]")
        if nuc.symbol:
            lines.append(f'symbol = "{nuc.symbol}"')
        lines.append(f"charge = {nuc.charge}")
        x, y, z = nuc.position
        lines.append(f"position = [{x!r}, {y!r}, {z!r}]")
    return "\n".join(lines) + "\n"


def nuclear_repulsion(mol: Molecule) -> float:
    """Sum of Z_a * Z_b / |R_a - R_b| over nucleus pairs, hartree."""
    positions = mol.positions
    charges = mol.charges
    total = 0.0
    for a in range(len(mol.nuclei)):
        for b in range(a + 1, len(mol.nuclei)):
            dist = np.linalg.norm(positions[a] - positions[b])
            if dist == 0.0:
                raise ValueError(f"nuclei {a} and {b} coincide")
            total += charges[a] * charges[b] / dist
    return float(total)


def _assign_electrons(mol: Molecule) -> np.ndarray:
    """Nucleus index per electron, round-robin weighted by nuclear charge."""
    charges = mol.charges
    assigned = np.zeros(len(mol.nuclei))
    out = np.empty(mol.n_electrons, dtype=np.int64)
    for i in range(mol.n_electrons):
        deficit = charges - assigned
        out[i] = int(np.argmax(deficit))
        assigned[out[i]] += 1
    return out


def init_walkers(mol: Molecule, batch_size: int, seed: int) -> WalkerBatch:
    """Initial electron configurations, shape (batch_size, n_electrons, 3).

    Each electron sits at its assigned nucleus plus isotropic unit Gaussian
    noise, so burn-in starts inside the high-density region. Deterministic
    for a fixed seed.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    centers = mol.positions[_assign_electrons(mol)]
    noise = rng.standard_normal((batch_size, mol.n_electrons, 3))
    return jnp.asarray(centers[None, :, :] + noise)
