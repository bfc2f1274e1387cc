"""Neural-network variational Monte Carlo for small molecules."""

import jax

# All wavefunction evaluation, sampling, and derivative code assumes double
# precision; float32 is far too coarse for local-energy statistics.
jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
