"""Permutation-equivariant neural wavefunction evaluated as (sign, log|psi|).

The architecture follows the FermiNet layout: a one-electron and a
two-electron stream exchange information through spin-resolved mean
pooling, orbitals are formed by projecting the final one-electron features
and multiplying by anisotropic decaying envelopes, and the wavefunction is
a weighted sum of spin-factored determinants. All determinant arithmetic
happens in signed log space so large electron counts cannot underflow.
"""

from __future__ import annotations

import dataclasses
import json
from typing import Any, Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from . import features as feat
from .system import Molecule, WalkerBatch

# Nested dict/list tree of jnp arrays.
Params = Any


@dataclasses.dataclass(frozen=True)
class NetworkHyperparams:
    n_layers: int = 4
    width_one: int = 256
    width_two: int = 32
    n_det: int = 16
    feature_kind: str = "slater"

    def __post_init__(self):
        for name in ("n_layers", "width_one", "width_two", "n_det"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.feature_kind not in ("linear", "slater"):
            raise ValueError(f"feature_kind must be 'linear' or 'slater', got {self.feature_kind!r}")


class LogPsi(NamedTuple):
    """Wavefunction value as (sign, log_abs); sign is +-1, or 0 at a node."""

    sign: jnp.ndarray
    log_abs: jnp.ndarray


def softplus(x: jnp.ndarray) -> jnp.ndarray:
    return jnp.logaddexp(x, 0.0)


def inverse_softplus(y) -> jnp.ndarray:
    # y + log(1 - exp(-y)) is stable for the y >= 1 values we initialize with.
    y = jnp.asarray(y, dtype=jnp.float64)
    return y + jnp.log(-jnp.expm1(-y))


def _num_channels(mol: Molecule) -> int:
    return 1 if mol.n_down == 0 else 2


def _layer_dims(mol: Molecule, hp: NetworkHyperparams) -> list[dict]:
    """Affine in/out widths per layer for both streams.

    The pooled input to the one-electron affine concatenates the electron's
    own features, the per-spin means of the one-electron stream, and the
    per-spin means over partners of the two-electron stream; spin channels
    with no electrons contribute nothing. The two-electron stream is not
    updated after the penultimate layer because only the one-electron
    output feeds the orbitals.
    """
    nch = _num_channels(mol)
    d_one = 4 * len(mol.nuclei)
    d_two = 4
    dims = []
    for layer in range(hp.n_layers):
        entry = {"one_in": d_one * (1 + nch) + d_two * nch, "one_out": hp.width_one}
        if layer < hp.n_layers - 1:
            entry["two_in"] = d_two
            entry["two_out"] = hp.width_two
            d_two = hp.width_two
        d_one = hp.width_one
        dims.append(entry)
    return dims


def init_params(mol: Molecule, hp: NetworkHyperparams, seed: int) -> Params:
    """Random parameter tree: N(0, 1/fan_in) weights, zero biases.

    Envelope scales start at 1 with identity anisotropy, determinant
    weights at 1/n_det, and the feature decay rates at the nuclear charge
    (electron-nucleus) and 1 (electron-electron), stored through the
    inverse of the positivity map.
    """
    key = jax.random.PRNGKey(seed)
    n_up, n_down = mol.spins
    n_nuc = len(mol.nuclei)

    def dense(k, fan_in, fan_out):
        return jax.random.normal(k, (fan_in, fan_out)) / jnp.sqrt(float(fan_in))

    layers = []
    for entry in _layer_dims(mol, hp):
        key, k_one, k_two = jax.random.split(key, 3)
        layer = {"v": dense(k_one, entry["one_in"], entry["one_out"]),
                 "b": jnp.zeros(entry["one_out"])}
        if "two_in" in entry:
            layer["w"] = dense(k_two, entry["two_in"], entry["two_out"])
            layer["c"] = jnp.zeros(entry["two_out"])
        layers.append(layer)

    orbitals = {}
    for name, n_orb in (("up", n_up), ("down", n_down)):
        key, k_orb = jax.random.split(key)
        orbitals[name] = {
            "w": jax.random.normal(k_orb, (hp.n_det, n_orb, hp.width_one))
            / jnp.sqrt(float(hp.width_one)),
            "g": jnp.zeros((hp.n_det, n_orb)),
        }

    # Envelope parameters are indexed by (determinant, orbital, nucleus) and
    # shared between the spin streams; n_up >= n_down covers both.
    envelope = {
        "pi": jnp.ones((hp.n_det, n_up, n_nuc)),
        "a": jnp.tile(jnp.eye(3), (hp.n_det, n_up, n_nuc, 1, 1)),
    }

    return {
        "layers": layers,
        "orbitals": orbitals,
        "envelope": envelope,
        "det_weights": jnp.full((hp.n_det,), 1.0 / hp.n_det),
        "features": {
            "raw_beta": inverse_softplus(mol.charges),
            "raw_gamma": inverse_softplus(jnp.ones(len(feat.PAIR_CHANNELS))),
        },
    }


def _signed_logsumexp(signs: jnp.ndarray, logs: jnp.ndarray):
    """Stable log of |sum_k signs_k * exp(logs_k)| with its sign."""
    pivot = jnp.max(logs)
    pivot = jnp.where(jnp.isfinite(pivot), pivot, 0.0)
    total = jnp.sum(signs * jnp.exp(logs - pivot))
    return jnp.sign(total), pivot + jnp.log(jnp.abs(total))


def _envelope_matrix(env: dict, nuc_pos: jnp.ndarray, pos_s: jnp.ndarray, n_orb: int):
    """Envelope values, shape (n_det, n_orb, n_electrons_in_stream)."""
    pi = env["pi"][:, :n_orb]
    aniso = env["a"][:, :n_orb]
    disp = pos_s[:, None, :] - nuc_pos
    stretched = jnp.einsum("kimxy,jmy->kijmx", aniso, disp)
    decay = jnp.exp(-jnp.linalg.norm(stretched, axis=-1))
    return jnp.einsum("kim,kijm->kij", pi, decay)


@dataclasses.dataclass(frozen=True)
class Wavefunction:
    """Bundle of pure functions evaluating one wavefunction family.

    apply/log_abs act on a single (n_electrons, 3) configuration;
    batch_apply/batch_log_abs on a (batch, n_electrons, 3) walker batch.
    orbitals exposes the determinant matrices and stream_trace the
    one-electron stream after every layer, both for inspection and tests.
    """

    mol: Molecule
    hp: NetworkHyperparams
    init: Callable[[int], Params]
    apply: Callable[[Params, jnp.ndarray], LogPsi]
    log_abs: Callable[[Params, jnp.ndarray], jnp.ndarray]
    batch_apply: Callable[[Params, WalkerBatch], LogPsi]
    batch_log_abs: Callable[[Params, WalkerBatch], jnp.ndarray]
    orbitals: Callable[[Params, jnp.ndarray], tuple]
    stream_trace: Callable[[Params, jnp.ndarray], list]


def make_wavefunction(mol: Molecule, hp: NetworkHyperparams) -> Wavefunction:
    """Builds the evaluation functions for a molecule/architecture pair."""
    n_up, n_down = mol.spins
    nuc_pos = jnp.asarray(mol.positions)
    channels = jnp.asarray(feat.pair_channel_matrix(n_up, n_down))
    use_slater = hp.feature_kind == "slater"

    def input_streams(params, pos):
        diff_en, d_en = feat.nuclear_displacements(pos, mol)
        diff_ee, d_ee = feat.pair_displacements(pos)
        if use_slater:
            beta = softplus(params["features"]["raw_beta"])
            gamma = softplus(params["features"]["raw_gamma"])
            f_en = feat.slater_map(d_en, beta)
            f_ee = feat.slater_map(d_ee, gamma[channels])
        else:
            f_en, f_ee = d_en, d_ee
        h_one = jnp.concatenate([diff_en, f_en[..., None]], axis=-1)
        h_one = h_one.reshape(h_one.shape[0], -1)
        h_two = jnp.concatenate([diff_ee, f_ee[..., None]], axis=-1)
        return h_one, h_two

    def pooled_input(h_one, h_two):
        n = h_one.shape[0]
        blocks = [h_one, jnp.broadcast_to(jnp.mean(h_one[:n_up], axis=0), (n, h_one.shape[1]))]
        if n_down:
            blocks.append(jnp.broadcast_to(jnp.mean(h_one[n_up:], axis=0), (n, h_one.shape[1])))
        blocks.append(jnp.mean(h_two[:, :n_up], axis=1))
        if n_down:
            blocks.append(jnp.mean(h_two[:, n_up:], axis=1))
        return jnp.concatenate(blocks, axis=-1)

    def run_streams(params, pos):
        h_one, h_two = input_streams(params, pos)
        trace = [h_one]
        for layer in params["layers"]:
            pooled = pooled_input(h_one, h_two)
            one_new = jnp.tanh(pooled @ layer["v"] + layer["b"])
            if one_new.shape == h_one.shape:
                one_new = one_new + h_one
            if "w" in layer:
                two_new = jnp.tanh(h_two @ layer["w"] + layer["c"])
                if two_new.shape == h_two.shape:
                    two_new = two_new + h_two
                h_two = two_new
            h_one = one_new
            trace.append(h_one)
        return h_one, trace

    def orbitals(params: Params, pos: jnp.ndarray) -> tuple:
        """Determinant matrices phi[k, i, j], one per spin (None if empty)."""
        h_one, _ = run_streams(params, pos)

        def spin_matrix(name, start, count):
            orb = params["orbitals"][name]
            stream = h_one[start:start + count]
            env = _envelope_matrix(params["envelope"], nuc_pos, pos[start:start + count], count)
            return (jnp.einsum("kiw,jw->kij", orb["w"], stream) + orb["g"][:, :, None]) * env

        phi_up = spin_matrix("up", 0, n_up)
        phi_down = spin_matrix("down", n_up, n_down) if n_down else None
        return phi_up, phi_down

    def apply(params: Params, pos: jnp.ndarray) -> LogPsi:
        phi_up, phi_down = orbitals(params, pos)
        sign_det, logdet = jnp.linalg.slogdet(phi_up)
        if phi_down is not None:
            sign_down, logdet_down = jnp.linalg.slogdet(phi_down)
            sign_det = sign_det * sign_down
            logdet = logdet + logdet_down

        omega = params["det_weights"]
        sign, log_abs = _signed_logsumexp(
            jnp.sign(omega) * sign_det, jnp.log(jnp.abs(omega)) + logdet
        )
        return LogPsi(sign, log_abs)

    def log_abs(params: Params, pos: jnp.ndarray) -> jnp.ndarray:
        return apply(params, pos).log_abs

    return Wavefunction(
        mol=mol,
        hp=hp,
        init=lambda seed: init_params(mol, hp, seed),
        apply=apply,
        log_abs=log_abs,
        batch_apply=jax.vmap(apply, in_axes=(None, 0)),
        batch_log_abs=jax.vmap(log_abs, in_axes=(None, 0)),
        orbitals=orbitals,
        stream_trace=lambda params, pos: run_streams(params, pos)[1],
    )


def forward(params: Params, hp: NetworkHyperparams, walkers: WalkerBatch, mol: Molecule) -> LogPsi:
    """Evaluates (sign, log|psi|) for every walker in the batch."""
    return make_wavefunction(mol, hp).batch_apply(params, walkers)


def envelope(r: jnp.ndarray, k: int, i: int, params: Params, mol: Molecule) -> float:
    """Decaying envelope of orbital i in determinant k at position r.

    Sum over nuclei of pi * exp(-|A (r - R)|), with the scale pi and the
    3x3 anisotropy A taken from the parameter tree.
    """
    pi = params["envelope"]["pi"]
    if not (0 <= k < pi.shape[0] and 0 <= i < pi.shape[1]):
        raise ValueError(f"envelope index (k={k}, i={i}) out of range for {pi.shape[:2]}")
    value = _envelope_matrix(
        {"pi": pi[k : k + 1, i : i + 1], "a": params["envelope"]["a"][k : k + 1, i : i + 1]},
        jnp.asarray(mol.positions),
        jnp.asarray(r)[None, :],
        1,
    )
    return float(value[0, 0, 0])


def feature_params(params: Params) -> feat.FeatureParams:
    """Positive-valued view of the trainable feature decay rates."""
    return feat.FeatureParams(
        beta=softplus(params["features"]["raw_beta"]),
        gamma=softplus(params["features"]["raw_gamma"]),
    )


def _flatten_tree(node, prefix: str, out: dict):
    if isinstance(node, dict):
        for key, value in node.items():
            _flatten_tree(value, f"{prefix}/{key}" if prefix else str(key), out)
    elif isinstance(node, (list, tuple)):
        for idx, value in enumerate(node):
            _flatten_tree(value, f"{prefix}/{idx}" if prefix else str(idx), out)
    else:
        out[prefix] = np.asarray(node)


def _unflatten_tree(flat: dict):
    if not isinstance(flat, dict):
        return jnp.asarray(flat)
    if flat and all(key.isdigit() for key in flat):
        return [_unflatten_tree(flat[str(idx)]) for idx in range(len(flat))]
    return {key: _unflatten_tree(value) for key, value in flat.items()}


def save_checkpoint(path, params: Params, meta: dict | None = None) -> None:
    """Writes the parameter tree plus JSON metadata; round-trips bit-exactly."""
    flat: dict = {}
    _flatten_tree(params, "", flat)
    np.savez(path, __meta__=np.array(json.dumps(meta or {})), **flat)


def load_checkpoint(path) -> tuple[Params, dict]:
    with np.load(path) as data:
        meta = json.loads(str(data["__meta__"]))
        nested: dict = {}
        for key in data.files:
            if key == "__meta__":
                continue
            node = nested
            parts = key.split("/")
            for part in parts[:-1]:
                node = node.setdefault(part, {})
            node[parts[-1]] = data[key]
    return _unflatten_tree(nested), meta
