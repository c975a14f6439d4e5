"""Global numerics configuration.

Importing this module (directly or via the package root) switches JAX to
double precision, which the whole library assumes.
"""

import jax

jax.config.update("jax_enable_x64", True)
