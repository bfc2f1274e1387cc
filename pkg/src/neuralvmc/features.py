"""Input feature streams for the wavefunction network.

Two variants share a common layout: the standard linear features carry raw
interparticle distances, while the Slater-exponential features replace each
distance d by (1/b)(1 - exp(-b d)). Both have unit slope at coalescence, so
swapping variants leaves the short-range (cusp) behaviour of the inputs
unchanged, but the exponential form saturates at 1/b instead of growing
without bound.
"""

from __future__ import annotations

import dataclasses

import jax.numpy as jnp
import numpy as np

from .system import Molecule, WalkerBatch

# Spin channels for electron pairs, in storage order.
PAIR_CHANNELS = ("up_up", "down_down", "up_down")


@dataclasses.dataclass(frozen=True)
class FeatureParams:
    """Decay rates for the Slater-exponential features, bohr^-1.

    beta is per nucleus; gamma holds one value per spin channel of an
    electron pair, ordered as PAIR_CHANNELS. All entries must be positive.
    """

    beta: jnp.ndarray
    gamma: jnp.ndarray

    def __post_init__(self):
        beta = jnp.atleast_1d(jnp.asarray(self.beta, dtype=jnp.float64))
        gamma = jnp.atleast_1d(jnp.asarray(self.gamma, dtype=jnp.float64))
        if gamma.shape != (len(PAIR_CHANNELS),):
            raise ValueError(f"gamma must have {len(PAIR_CHANNELS)} entries, got shape {gamma.shape}")
        for name, arr in (("beta", beta), ("gamma", gamma)):
            if not bool(jnp.all(jnp.isfinite(arr)) & jnp.all(arr > 0)):
                raise ValueError(f"{name} entries must be positive and finite")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)


@dataclasses.dataclass(frozen=True)
class FeatureTensors:
    """Network inputs built from a walker batch.

    one_electron: (batch, n, 4 * n_nuclei); per electron the concatenation
        over nuclei of [displacement (3), distance feature (1)].
    two_electron: (batch, n, n, 4); [displacement (3), distance feature (1)]
        per ordered electron pair, diagonal zeroed.
    """

    one_electron: jnp.ndarray
    two_electron: jnp.ndarray


def pair_channel_matrix(n_up: int, n_down: int) -> np.ndarray:
    """(n, n) index into PAIR_CHANNELS for each ordered electron pair."""
    n = n_up + n_down
    is_up = np.arange(n) < n_up
    same_up = np.logical_and(is_up[:, None], is_up[None, :])
    same_down = np.logical_and(~is_up[:, None], ~is_up[None, :])
    channels = np.full((n, n), PAIR_CHANNELS.index("up_down"), dtype=np.int64)
    channels[same_up] = PAIR_CHANNELS.index("up_up")
    channels[same_down] = PAIR_CHANNELS.index("down_down")
    return channels


def nuclear_displacements(positions: jnp.ndarray, mol: Molecule):
    """Electron-nucleus displacements (..., n, m, 3) and distances (..., n, m)."""
    diff = positions[..., :, None, :] - jnp.asarray(mol.positions)
    return diff, jnp.linalg.norm(diff, axis=-1)


def pair_displacements(positions: jnp.ndarray):
    """Electron-electron displacements (..., n, n, 3) and distances (..., n, n).

    The diagonal is masked before the norm so its (zero) entries carry zero
    gradient instead of NaN.
    """
    n = positions.shape[-2]
    diff = positions[..., :, None, :] - positions[..., None, :, :]
    eye = jnp.eye(n)
    dist = jnp.linalg.norm(diff + eye[..., None], axis=-1) * (1.0 - eye)
    return diff, dist


def slater_map(dist: jnp.ndarray, rate: jnp.ndarray) -> jnp.ndarray:
    """(1/rate)(1 - exp(-rate * dist)); unit slope at dist = 0, saturates at 1/rate.

    Written with expm1 so tiny distances keep full precision; the plain
    1 - exp(-x) form loses all significant digits exactly where the
    coalescence behaviour matters.
    """
    return -jnp.expm1(-rate * dist) / rate


def _assemble(diff_en, feat_en, diff_ee, feat_ee) -> FeatureTensors:
    one = jnp.concatenate([diff_en, feat_en[..., None]], axis=-1)
    one = one.reshape(one.shape[:-2] + (-1,))
    two = jnp.concatenate([diff_ee, feat_ee[..., None]], axis=-1)
    return FeatureTensors(one_electron=one, two_electron=two)


def linear_features(walkers: WalkerBatch, mol: Molecule) -> FeatureTensors:
    """Standard features: raw displacements and distances."""
    diff_en, d_en = nuclear_displacements(walkers, mol)
    diff_ee, d_ee = pair_displacements(walkers)
    return _assemble(diff_en, d_en, diff_ee, d_ee)


def slater_features(walkers: WalkerBatch, mol: Molecule, fp: FeatureParams) -> FeatureTensors:
    """Slater-exponential features: distances mapped through slater_map.

    The electron-nucleus rate is per nucleus; the electron-electron rate is
    selected per pair from the spin channel. Displacement blocks are the
    same as in linear_features.
    """
    diff_en, d_en = nuclear_displacements(walkers, mol)
    diff_ee, d_ee = pair_displacements(walkers)
    rate_ee = fp.gamma[pair_channel_matrix(mol.n_up, mol.n_down)]
    return _assemble(diff_en, slater_map(d_en, fp.beta), diff_ee, slater_map(d_ee, rate_ee))


def feature_cusp_slope(fp: FeatureParams, kind: str, index: int) -> float:
    """d(feature)/d(distance) at zero distance, which is 1 for every rate.

    The 1/rate prefactor in slater_map exists precisely to normalize this
    slope, so the short-range behaviour matches the linear features exactly.

    Args:
        fp: feature parameters (validated positive).
        kind: "electron_nuclear" (index is a nucleus) or "electron_electron"
            (index is a PAIR_CHANNELS position).
        index: which rate to inspect; only bounds-checked, since the slope
            is rate-independent.
    """
    if kind == "electron_nuclear":
        rates = fp.beta
    elif kind == "electron_electron":
        rates = fp.gamma
    else:
        raise ValueError(f"unknown kind {kind!r}")
    if not 0 <= index < rates.shape[0]:
        raise ValueError(f"index {index} out of range for {kind} ({rates.shape[0]} rates)")
    return 1.0
