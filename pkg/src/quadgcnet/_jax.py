"""jax with 64-bit floats; imported lazily by the optimizer.

Compiled kernels are cached on disk (``QUADGCNET_JAX_CACHE``, default
``~/.cache/quadgcnet/jax``; set it to an empty string to disable) so that
worker processes and repeated runs skip recompilation.
"""
import os
from pathlib import Path

import jax

jax.config.update("jax_enable_x64", True)
jax.config.update("jax_platforms", "cpu")

_cache = os.environ.get("QUADGCNET_JAX_CACHE", str(Path.home() / ".cache" / "quadgcnet" / "jax"))
if _cache:
    jax.config.update("jax_compilation_cache_dir", _cache)
    jax.config.update("jax_persistent_cache_min_compile_time_secs", 0.0)

import jax.numpy as jnp  # noqa: E402

__all__ = ["jax", "jnp"]
