"""Coulomb potential and local energy E_L = (H psi) / psi.

The kinetic part uses the log-derivative identity
(T psi)/psi = -1/2 * sum_i (|grad_i log|psi||^2 + lap_i log|psi|),
so any object exposing log|psi| for a single configuration can be fed
through this module, analytic test wavefunctions and the network alike.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from . import derivatives, system
from .derivatives import LogAbsFn
from .system import Molecule, WalkerBatch


@dataclasses.dataclass(frozen=True)
class LocalEnergySample:
    """Per-walker energy decomposition, hartree. total = kinetic + potential."""

    kinetic: jnp.ndarray
    potential: jnp.ndarray
    total: jnp.ndarray


def _potential_single(pos: jnp.ndarray, nuc_pos: jnp.ndarray, charges: jnp.ndarray,
                      repulsion: float) -> jnp.ndarray:
    d_en = jnp.linalg.norm(pos[:, None, :] - nuc_pos, axis=-1)
    attraction = -jnp.sum(charges / d_en)
    n = pos.shape[0]
    diff = pos[:, None, :] - pos[None, :, :]
    eye = jnp.eye(n)
    d_ee = jnp.linalg.norm(diff + eye[..., None], axis=-1)
    pair = jnp.sum(jnp.triu(1.0 / d_ee, k=1))
    return attraction + pair + repulsion


def make_potential(mol: Molecule) -> Callable[[jnp.ndarray], jnp.ndarray]:
    """Single-configuration Coulomb energy, jit-compatible."""
    nuc_pos = jnp.asarray(mol.positions)
    charges = jnp.asarray(mol.charges)
    repulsion = system.nuclear_repulsion(mol)
    return lambda pos: _potential_single(pos, nuc_pos, charges, repulsion)


def _check_separations(walkers: np.ndarray, mol: Molecule) -> None:
    nuc = mol.positions
    d_en = np.linalg.norm(walkers[:, :, None, :] - nuc[None, None], axis=-1)
    diff = walkers[:, :, None, :] - walkers[:, None, :, :]
    d_ee = np.linalg.norm(diff, axis=-1)
    iu = np.triu_indices(walkers.shape[1], k=1)
    bad = np.flatnonzero((d_en == 0).any(axis=(1, 2)) | (d_ee[:, iu[0], iu[1]] == 0).any(axis=1))
    if bad.size:
        raise ValueError(f"zero interparticle separation in walkers {bad.tolist()}")


def potential(walkers: WalkerBatch, mol: Molecule) -> jnp.ndarray:
    """Per-walker potential energy, hartree.

    Electron-nucleus attraction, electron-electron repulsion, and the
    constant nuclear repulsion. Raises on exactly coincident particles.
    """
    arr = np.asarray(walkers, dtype=np.float64)
    _check_separations(arr, mol)
    return jax.vmap(make_potential(mol))(jnp.asarray(arr))


def make_local_energy(log_abs_fn: LogAbsFn, mol: Molecule) -> Callable[[jnp.ndarray], tuple]:
    """Single-configuration (kinetic, potential, total), jit-compatible."""
    grad_and_lap = derivatives.make_grad_and_laplacian(log_abs_fn)
    potential_fn = make_potential(mol)

    def single(pos: jnp.ndarray):
        grad, lap = grad_and_lap(pos)
        kinetic = -0.5 * (jnp.sum(grad**2) + lap)
        pot = potential_fn(pos)
        return kinetic, pot, kinetic + pot

    return single


def local_energy(log_abs_fn: LogAbsFn, walkers: WalkerBatch, mol: Molecule) -> LocalEnergySample:
    """Per-walker local energy of the given wavefunction.

    Raises on nodes (via the derivative engine) and on coincident particles
    (via the potential).
    """
    arr = np.asarray(walkers, dtype=np.float64)
    _check_separations(arr, mol)
    coords = derivatives.coordinate_derivatives(log_abs_fn, jnp.asarray(arr))
    kinetic = -0.5 * (jnp.sum(coords.grad**2, axis=(1, 2)) + coords.laplacian)
    pot = jax.vmap(make_potential(mol))(jnp.asarray(arr))
    return LocalEnergySample(kinetic=kinetic, potential=pot, total=kinetic + pot)
