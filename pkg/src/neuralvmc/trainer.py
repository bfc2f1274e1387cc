"""Stochastic energy minimization and learning-curve statistics.

One iteration runs a fixed number of Metropolis sweeps, estimates the batch
energy with outlier clipping, forms the covariance-style gradient of the
energy expectation, and applies a bias-corrected adaptive-moment update.
The reported energy of a run is the converged mean over the tail of the
learning curve, with its error bar from a blocking analysis.
"""

from __future__ import annotations

import dataclasses
import json
import time
from typing import NamedTuple, Optional

import jax
import jax.numpy as jnp
import numpy as np

from . import hamiltonian, sampler, system
from .network import NetworkHyperparams, Wavefunction, make_wavefunction, save_checkpoint
from .system import Molecule, WalkerBatch


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    pass


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    n_iterations: int
    batch_size: int = 256
    learning_rate: float = 1e-3
    # lr(t) = learning_rate / (1 + t / lr_decay_steps)
    lr_decay_steps: float = 1e4
    clip_width: float = 5.0  # local-energy clip half-width, in MAD units
    mcmc_steps_per_update: int = 10
    burn_in_steps: int = 500
    seed: int = 0
    convergence_threshold: float = 1e-4  # hartree
    convergence_window: int = 1000  # iterations
    target_acceptance: float = 0.5
    initial_step_size: float = 0.5  # bohr
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        positive = (
            "batch_size", "learning_rate", "lr_decay_steps", "clip_width",
            "mcmc_steps_per_update", "convergence_threshold", "convergence_window",
            "initial_step_size", "checkpoint_every",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.burn_in_steps < 0:
            raise ValueError("burn_in_steps must be >= 0")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target_acceptance must be in (0, 1)")


@dataclasses.dataclass(frozen=True)
class LearningCurve:
    """Per-iteration training records; columns are parallel arrays."""

    steps: np.ndarray
    energy: np.ndarray  # batch mean of clipped local energies, hartree
    variance: np.ndarray  # batch variance of clipped local energies, hartree^2
    acceptance: np.ndarray
    walltime_ms: np.ndarray

    def __post_init__(self):
        arrays = (self.steps, self.energy, self.variance, self.acceptance, self.walltime_ms)
        if len({a.shape for a in arrays}) != 1:
            raise ValueError("curve columns must have identical lengths")
        if len(self.steps) and np.any(np.diff(self.steps) <= 0):
            raise ValueError("steps must be strictly increasing")
        if np.any(self.variance < 0):
            raise ValueError("variance must be non-negative")

    def __len__(self) -> int:
        return len(self.steps)

    @classmethod
    def empty(cls) -> "LearningCurve":
        zero = np.zeros(0)
        return cls(np.zeros(0, dtype=np.int64), zero, zero.copy(), zero.copy(), zero.copy())


CURVE_CSV_HEADER = "step,energy_ha,variance_ha2,acceptance,walltime_ms"


def write_curve_csv(curve: LearningCurve, path, metadata: Optional[dict] = None) -> None:
    """Writes the curve; metadata goes into a single leading comment line."""
    with open(path, "w", encoding="utf-8") as fh:
        if metadata is not None:
            fh.write(f"# {json.dumps(metadata, sort_keys=True)}\n")
        fh.write(CURVE_CSV_HEADER + "\n")
        for i in range(len(curve)):
            fh.write(
                f"{int(curve.steps[i])},{float(curve.energy[i])!r},{float(curve.variance[i])!r},"
                f"{float(curve.acceptance[i])!r},{float(curve.walltime_ms[i])!r}\n"
            )


def read_curve_csv(path) -> tuple[LearningCurve, dict]:
    metadata: dict = {}
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                metadata = json.loads(line[1:].strip())
            elif line != CURVE_CSV_HEADER:
                rows.append(line.split(","))
    if rows:
        cols = list(zip(*rows))
    else:
        cols = [[]] * 5
    curve = LearningCurve(
        steps=np.array([int(s) for s in cols[0]], dtype=np.int64),
        energy=np.array([float(s) for s in cols[1]]),
        variance=np.array([float(s) for s in cols[2]]),
        acceptance=np.array([float(s) for s in cols[3]]),
        walltime_ms=np.array([float(s) for s in cols[4]]),
    )
    return curve, metadata


# ---------------------------------------------------------------------------
# Adam with bias correction.


class AdamState(NamedTuple):
    count: jnp.ndarray
    mu: object
    nu: object


def adam_init(params) -> AdamState:
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamState(count=jnp.zeros((), dtype=jnp.int64), mu=zeros,
                     nu=jax.tree_util.tree_map(jnp.zeros_like, params))


def adam_update(params, grads, state: AdamState, lr, b1=0.9, b2=0.999, eps=1e-8):
    count = state.count + 1
    mu = jax.tree_util.tree_map(lambda m, g: b1 * m + (1 - b1) * g, state.mu, grads)
    nu = jax.tree_util.tree_map(lambda v, g: b2 * v + (1 - b2) * g**2, state.nu, grads)
    scale_mu = 1.0 / (1 - b1**count)
    scale_nu = 1.0 / (1 - b2**count)
    new_params = jax.tree_util.tree_map(
        lambda p, m, v: p - lr * (m * scale_mu) / (jnp.sqrt(v * scale_nu) + eps),
        params, mu, nu,
    )
    return new_params, AdamState(count=count, mu=mu, nu=nu)


# ---------------------------------------------------------------------------
# Clipped energy estimate and its parameter gradient.


def _make_energy_and_grad(wf: Wavefunction, clip_width: float):
    """Pure (params, walkers) -> (energy, grad tree, aux dict), jittable.

    Local energies are clipped to median +- clip_width * MAD before both the
    batch mean and the gradient weights; non-finite samples get zero weight
    and their fraction is reported in aux for the caller to police.
    """

    def local_energies(params, walkers):
        single = hamiltonian.make_local_energy(lambda pos: wf.log_abs(params, pos), wf.mol)
        _, _, total = jax.vmap(single)(walkers)
        return total

    def energy_and_grad(params, walkers):
        batch = walkers.shape[0]
        e_l = local_energies(params, walkers)
        finite = jnp.isfinite(e_l)
        e_nan = jnp.where(finite, e_l, jnp.nan)
        median = jnp.nanmedian(e_nan)
        mad = jnp.nanmedian(jnp.abs(e_nan - median))
        clipped = jnp.clip(e_l, median - clip_width * mad, median + clip_width * mad)
        clipped = jnp.where(finite, clipped, 0.0)
        n_ok = jnp.sum(finite)
        energy = jnp.sum(clipped) / n_ok
        variance = jnp.sum(jnp.where(finite, (clipped - energy) ** 2, 0.0)) / n_ok
        weights = jnp.where(finite, (2.0 / batch) * (clipped - energy), 0.0)

        def surrogate(p):
            logs = jax.vmap(lambda x: wf.log_abs(p, x))(walkers)
            return jnp.sum(jax.lax.stop_gradient(weights) * logs)

        grad = jax.grad(surrogate)(params)
        aux = {"variance": variance, "frac_nonfinite": 1.0 - n_ok / batch}
        return energy, grad, aux

    return energy_and_grad


def energy_and_grad(wf: Wavefunction, params, walkers: WalkerBatch, clip_width: float = 5.0):
    """Batch energy estimate and gradient of the energy expectation.

    Raises TrainingError when more than 10% of the batch produced
    non-finite local energies.
    """
    energy, grad, aux = _make_energy_and_grad(wf, clip_width)(params, jnp.asarray(walkers))
    frac = float(aux["frac_nonfinite"])
    if frac > 0.1:
        raise TrainingError(f"{frac:.1%} of local energies are non-finite")
    return float(energy), grad


# ---------------------------------------------------------------------------
# Training loop.


def _checkpoint_meta(mol: Molecule, hp: NetworkHyperparams, tc: TrainConfig, step: int) -> dict:
    return {
        "seed": tc.seed,
        "step": step,
        "hyperparams": dataclasses.asdict(hp),
        "train_config": dataclasses.asdict(tc),
        "molecule": system.serialize_molecule(mol),
    }


def train(
    mol: Molecule,
    hp: NetworkHyperparams,
    tc: TrainConfig,
    out_dir=None,
) -> tuple[object, LearningCurve]:
    """Optimizes the wavefunction; returns final parameters and the curve.

    Stops early once the means of two consecutive convergence windows agree
    to within the configured threshold. Aborts (keeping the last checkpoint
    if out_dir is given) when the energy rises more than 10 hartree above
    its initial value or when too many local energies go non-finite.
    Deterministic for a fixed seed up to platform floating point.
    """
    wf = make_wavefunction(mol, hp)
    params = wf.init(tc.seed)
    if tc.n_iterations == 0:
        return params, LearningCurve.empty()

    # Sub-seeds keep the parameter, walker, and chain streams distinct.
    walkers = system.init_walkers(mol, tc.batch_size, seed=tc.seed + 1)
    bound = lambda w: wf.batch_log_abs(params, w)
    state = sampler.init_sampler(
        bound, walkers, seed=tc.seed + 2,
        step_size=tc.initial_step_size, target_acceptance=tc.target_acceptance,
    )
    state = sampler.burn_in(
        bound, state, tc.burn_in_steps, mol, target_acceptance=tc.target_acceptance
    )

    energy_grad_fn = _make_energy_and_grad(wf, tc.clip_width)
    opt_state = adam_init(params)

    @jax.jit
    def training_step(params, opt_state, samp_state, step_index):
        batch_log_abs = lambda w: wf.batch_log_abs(params, w)
        samp_state = sampler.refresh_cache(batch_log_abs, samp_state)
        kernel = sampler.make_mcmc_step(batch_log_abs, mol, jit=False)

        def body(_, carry):
            st, acc = carry
            st, rate = kernel(st)
            return st, acc + rate

        samp_state, acc_sum = jax.lax.fori_loop(
            0, tc.mcmc_steps_per_update, body, (samp_state, jnp.zeros(()))
        )
        energy, grad, aux = energy_grad_fn(params, samp_state.walkers)
        lr = tc.learning_rate / (1.0 + step_index / tc.lr_decay_steps)
        params, opt_state = adam_update(params, grad, opt_state, lr)
        return params, opt_state, samp_state, energy, aux, acc_sum / tc.mcmc_steps_per_update

    def checkpoint(step):
        if out_dir is not None:
            save_checkpoint(
                f"{out_dir}/checkpoint.npz", params, _checkpoint_meta(mol, hp, tc, step)
            )

    steps, energies, variances, acceptances, walltimes = [], [], [], [], []
    first_energy = None
    for t in range(tc.n_iterations):
        tic = time.perf_counter()
        params, opt_state, state, energy, aux, acc = training_step(
            params, opt_state, state, jnp.asarray(float(t))
        )
        energy = float(energy)
        walltimes.append((time.perf_counter() - tic) * 1e3)

        frac = float(aux["frac_nonfinite"])
        if frac > 0.1:
            checkpoint(t)
            raise TrainingError(f"step {t}: {frac:.1%} of local energies are non-finite")
        if first_energy is None:
            first_energy = energy
        if not np.isfinite(energy) or energy > first_energy + 10.0:
            checkpoint(t)
            raise DivergenceError(
                f"step {t}: energy {energy:.4f} Ha diverged from initial {first_energy:.4f} Ha"
            )

        steps.append(t)
        energies.append(energy)
        variances.append(float(aux["variance"]))
        acceptances.append(float(acc))

        if (t + 1) % tc.checkpoint_every == 0:
            checkpoint(t)
        if _tail_windows_agree(energies, tc.convergence_window, tc.convergence_threshold):
            break

    curve = LearningCurve(
        steps=np.asarray(steps, dtype=np.int64),
        energy=np.asarray(energies),
        variance=np.asarray(variances),
        acceptance=np.asarray(acceptances),
        walltime_ms=np.asarray(walltimes),
    )
    checkpoint(int(curve.steps[-1]))
    return params, curve


def _tail_windows_agree(energies: list, window: int, threshold: float) -> bool:
    if len(energies) < 2 * window:
        return False
    tail = np.asarray(energies[-2 * window:])
    return abs(tail[window:].mean() - tail[:window].mean()) < threshold


# ---------------------------------------------------------------------------
# Curve statistics.


def blocking_stderr(values: np.ndarray) -> tuple[float, float]:
    """Standard error of the mean of a correlated series, via blocking.

    Repeatedly halves the series by pairwise averaging and takes the largest
    variance-of-mean estimate across levels (with at least 32 blocks, so the
    level estimates stay meaningful). Returns (stderr, tau) where tau is the
    implied integrated autocorrelation time.
    """
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n < 2:
        return 0.0, 1.0
    naive = values.var(ddof=1) / n
    best = naive
    level = values
    while len(level) // 2 >= 32:
        half = len(level) // 2
        level = 0.5 * (level[: 2 * half : 2] + level[1 : 2 * half : 2])
        best = max(best, level.var(ddof=1) / len(level))
    tau = best / naive if naive > 0 else 1.0
    return float(np.sqrt(best)), float(tau)


def curve_energy(curve: LearningCurve, window: int) -> tuple[float, float]:
    """Mean of the last `window` curve energies with a blocking error bar."""
    if window < 1:
        raise ValueError("window must be >= 1")
    if window > len(curve):
        raise ValueError(f"window {window} exceeds curve length {len(curve)}")
    tail = curve.energy[-window:]
    stderr, _ = blocking_stderr(tail)
    return float(tail.mean()), stderr


def detect_convergence(curve: LearningCurve, threshold: float, window: int) -> Optional[int]:
    """First step where two consecutive window means agree within threshold.

    Returns the step value of the record at which the criterion first holds,
    or None if it never does.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    n = len(curve)
    if n < 2 * window:
        return None
    csum = np.concatenate([[0.0], np.cumsum(curve.energy)])
    means = (csum[window:] - csum[:-window]) / window  # means[j] = mean(e[j:j+window])
    gaps = np.abs(means[window:] - means[:-window])
    hits = np.flatnonzero(gaps < threshold)
    if not hits.size:
        return None
    return int(curve.steps[2 * window - 1 + hits[0]])
