"""Exact derivatives of log|psi| plus an independent finite-difference oracle.

Coordinate gradients come from reverse-mode differentiation; the Laplacian
is accumulated as 3N second directional derivatives along coordinate axes
(forward-over-reverse), which keeps memory flat in the electron count.
Finite differences appear only in the oracle functions used to cross-check
the exact engine.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
import numpy as np

from .system import WalkerBatch

# Evaluates log|psi| for a single (n_electrons, 3) configuration.
LogAbsFn = Callable[[jnp.ndarray], jnp.ndarray]


class CoordinateDerivatives(NamedTuple):
    grad: jnp.ndarray  # (batch, n_electrons, 3), d log|psi| / d r
    laplacian: jnp.ndarray  # (batch,), sum of all 3N second derivatives


def make_grad_and_laplacian(log_abs_fn: LogAbsFn) -> Callable[[jnp.ndarray], tuple]:
    """Returns a function of one configuration computing (grad, laplacian)."""

    def single(pos: jnp.ndarray):
        shape = pos.shape
        flat = pos.reshape(-1)
        n = flat.shape[0]

        def f_flat(x):
            return log_abs_fn(x.reshape(shape))

        grad_fn = jax.grad(f_flat)
        basis = jnp.eye(n)

        def body(i, acc):
            _, tangent = jax.jvp(grad_fn, (flat,), (basis[i],))
            return acc + tangent[i]

        laplacian = jax.lax.fori_loop(0, n, body, jnp.zeros(()))
        return grad_fn(flat).reshape(shape), laplacian

    return single


def coordinate_derivatives(log_abs_fn: LogAbsFn, walkers: WalkerBatch) -> CoordinateDerivatives:
    """Exact gradient and Laplacian of log|psi| for every walker.

    Raises if any walker sits where log|psi| is not finite (a node), since
    log-derivatives are undefined there.
    """
    walkers = jnp.asarray(walkers)
    values = jax.vmap(log_abs_fn)(walkers)
    bad = np.flatnonzero(~np.isfinite(np.asarray(values)))
    if bad.size:
        raise ValueError(f"log|psi| is not finite for walkers {bad.tolist()}")
    grad, laplacian = jax.vmap(make_grad_and_laplacian(log_abs_fn))(walkers)
    return CoordinateDerivatives(grad=grad, laplacian=laplacian)


def fd_coordinate_derivatives(
    log_abs_fn: LogAbsFn, walkers: WalkerBatch, step: float = 1e-5
) -> CoordinateDerivatives:
    """Central-difference oracle for coordinate_derivatives, O(step^2) accurate.

    Deliberately dumb: 2 evaluations per coordinate for the gradient and the
    standard three-point stencil per coordinate for the Laplacian.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    walkers = np.asarray(walkers, dtype=np.float64)
    batch, n_elec, _ = walkers.shape
    grad = np.zeros_like(walkers)
    laplacian = np.zeros(batch)
    for b in range(batch):
        center = float(log_abs_fn(jnp.asarray(walkers[b])))
        for i in range(n_elec):
            for c in range(3):
                plus = walkers[b].copy()
                minus = walkers[b].copy()
                plus[i, c] += step
                minus[i, c] -= step
                f_plus = float(log_abs_fn(jnp.asarray(plus)))
                f_minus = float(log_abs_fn(jnp.asarray(minus)))
                grad[b, i, c] = (f_plus - f_minus) / (2 * step)
                laplacian[b] += (f_plus - 2 * center + f_minus) / step**2
    return CoordinateDerivatives(grad=jnp.asarray(grad), laplacian=jnp.asarray(laplacian))


def parameter_gradient(
    log_abs_param_fn: Callable[[object, jnp.ndarray], jnp.ndarray],
    params,
    walkers: WalkerBatch,
    weights: jnp.ndarray,
):
    """Gradient of sum_b weights[b] * log|psi(x_b; params)| w.r.t. params.

    weights are treated as constants; the result has the shape of params.
    """
    walkers = jnp.asarray(walkers)
    weights = jnp.asarray(weights)
    if weights.shape != (walkers.shape[0],):
        raise ValueError(f"need one weight per walker, got {weights.shape} for batch {walkers.shape[0]}")

    def weighted_sum(p):
        logs = jax.vmap(lambda x: log_abs_param_fn(p, x))(walkers)
        return jnp.sum(jax.lax.stop_gradient(weights) * logs)

    return jax.grad(weighted_sum)(params)
