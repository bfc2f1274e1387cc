"""Metropolis random-walk sampling of |psi|^2 with step-size adaptation.

All electrons move at once with an isotropic Gaussian proposal; the
acceptance ratio needs only log|psi| differences, so the wavefunction
normalization never enters. Each walker owns an independent counter-based
RNG stream, which makes chains deterministic and order-independent.
"""

from __future__ import annotations

from typing import Callable, NamedTuple, Optional

import jax
import jax.numpy as jnp

from .system import Molecule, WalkerBatch

# Evaluates log|psi| for a (batch, n_electrons, 3) walker batch.
BatchLogAbsFn = Callable[[WalkerBatch], jnp.ndarray]

# Proposals closer than this (bohr) to a Coulomb singularity are rejected
# outright; the potential and the distance features are undefined there.
SINGULARITY_CUTOFF = 1e-12

_EMA_DECAY = 0.9
_ADAPT_RATE = 0.1
_STEP_BOUNDS = (1e-3, 10.0)


class SamplerState(NamedTuple):
    walkers: jnp.ndarray  # (batch, n_electrons, 3)
    log_psi: jnp.ndarray  # (batch,), cached log|psi| at walkers
    step_size: jnp.ndarray  # scalar, bohr
    rng: jnp.ndarray  # (batch, 2), per-walker PRNG keys
    acceptance_ema: jnp.ndarray  # scalar, running acceptance estimate


def init_sampler(
    log_abs_batched: BatchLogAbsFn,
    walkers: WalkerBatch,
    seed: int,
    step_size: float = 0.5,
    target_acceptance: float = 0.5,
) -> SamplerState:
    """Fresh sampler state with a valid log|psi| cache."""
    walkers = jnp.asarray(walkers)
    keys = jax.random.split(jax.random.PRNGKey(seed), walkers.shape[0])
    return SamplerState(
        walkers=walkers,
        log_psi=log_abs_batched(walkers),
        step_size=jnp.asarray(float(step_size)),
        rng=keys,
        acceptance_ema=jnp.asarray(float(target_acceptance)),
    )


def refresh_cache(log_abs_batched: BatchLogAbsFn, state: SamplerState) -> SamplerState:
    """Recomputes the cached log|psi|, e.g. after a parameter update."""
    return state._replace(log_psi=log_abs_batched(state.walkers))


def _min_squared_separation(pos: jnp.ndarray, nuc_pos: Optional[jnp.ndarray]) -> jnp.ndarray:
    n = pos.shape[0]
    best = jnp.asarray(jnp.inf)
    if nuc_pos is not None and nuc_pos.shape[0]:
        d2 = jnp.sum((pos[:, None, :] - nuc_pos) ** 2, axis=-1)
        best = jnp.minimum(best, jnp.min(d2))
    if n > 1:
        d2 = jnp.sum((pos[:, None, :] - pos[None, :, :]) ** 2, axis=-1)
        d2 = jnp.where(jnp.eye(n, dtype=bool), jnp.inf, d2)
        best = jnp.minimum(best, jnp.min(d2))
    return best


def make_mcmc_step(
    log_abs_batched: BatchLogAbsFn,
    mol: Optional[Molecule] = None,
    jit: bool = True,
) -> Callable[[SamplerState], tuple[SamplerState, jnp.ndarray]]:
    """Builds the transition kernel: state -> (new state, acceptance rate).

    Each walker proposes r' = r + step_size * xi with xi ~ N(0, I) over all
    electrons and accepts with probability min(1, |psi(r')/psi(r)|^2).
    Proposals within SINGULARITY_CUTOFF of a particle coincidence are
    rejected unconditionally. The step size is never changed here, so a
    fixed-parameter chain is a proper Markov chain.
    """
    nuc_pos = jnp.asarray(mol.positions) if mol is not None else None

    def step(state: SamplerState) -> tuple[SamplerState, jnp.ndarray]:
        keys = jax.vmap(lambda k: jax.random.split(k, 3))(state.rng)
        carry, k_prop, k_accept = keys[:, 0], keys[:, 1], keys[:, 2]

        noise = jax.vmap(lambda k: jax.random.normal(k, state.walkers.shape[1:]))(k_prop)
        proposal = state.walkers + state.step_size * noise
        log_new = log_abs_batched(proposal)

        log_u = jnp.log(jax.vmap(jax.random.uniform)(k_accept))
        min_sep2 = jax.vmap(lambda p: _min_squared_separation(p, nuc_pos))(proposal)
        # NaN in log_new fails the comparison, i.e. rejects, as it should.
        accept = (log_u < 2.0 * (log_new - state.log_psi)) & (
            min_sep2 > SINGULARITY_CUTOFF**2
        )

        rate = jnp.mean(accept)
        new_state = SamplerState(
            walkers=jnp.where(accept[:, None, None], proposal, state.walkers),
            log_psi=jnp.where(accept, log_new, state.log_psi),
            step_size=state.step_size,
            rng=carry,
            acceptance_ema=_EMA_DECAY * state.acceptance_ema + (1.0 - _EMA_DECAY) * rate,
        )
        return new_state, rate

    return jax.jit(step) if jit else step


def mcmc_step(
    log_abs_batched: BatchLogAbsFn, state: SamplerState, mol: Optional[Molecule] = None
) -> tuple[SamplerState, jnp.ndarray]:
    """One Metropolis sweep over the batch; see make_mcmc_step."""
    return make_mcmc_step(log_abs_batched, mol, jit=False)(state)


def adapt_step(state: SamplerState, target_acceptance: float = 0.5) -> SamplerState:
    """Multiplicative step-size update toward the target acceptance rate."""
    if not 0.0 < target_acceptance < 1.0:
        raise ValueError(f"target acceptance must be in (0, 1), got {target_acceptance}")
    new_step = state.step_size * jnp.exp(
        _ADAPT_RATE * (state.acceptance_ema - target_acceptance)
    )
    return state._replace(step_size=jnp.clip(new_step, *_STEP_BOUNDS))


def burn_in(
    log_abs_batched: BatchLogAbsFn,
    state: SamplerState,
    n_steps: int,
    mol: Optional[Molecule] = None,
    target_acceptance: float = 0.5,
    adapt_every: int = 20,
) -> SamplerState:
    """Equilibrates the chain, adapting the step size every adapt_every steps.

    Adaptation happens only here; production sampling afterwards runs at a
    frozen step size. The log|psi| cache is refreshed on entry.
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    state = refresh_cache(log_abs_batched, state)
    if n_steps == 0:
        return state
    kernel = make_mcmc_step(log_abs_batched, mol)
    for step_index in range(1, n_steps + 1):
        state, _ = kernel(state)
        if step_index % adapt_every == 0:
            state = adapt_step(state, target_acceptance)
    return state
