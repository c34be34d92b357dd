"""Single place where JAX is configured; every JAX-using module imports from here.

Compiled kernels are cached on disk (``SKEWSV_JAX_CACHE``, default
``~/.cache/skewsv/jax``; set it to an empty string to disable) so separate
processes reuse the sampler kernels for a given model and series length.
"""

import os

import jax
import jax.numpy as jnp

jax.config.update("jax_enable_x64", True)

_cache = os.environ.get("SKEWSV_JAX_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "skewsv", "jax"))
if _cache:
    jax.config.update("jax_compilation_cache_dir", _cache)
    jax.config.update("jax_persistent_cache_min_compile_time_secs", 1.0)

__all__ = ["jax", "jnp"]
