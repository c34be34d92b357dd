"""Shared finite-difference gradient check for the model targets."""

import numpy as np

from skewsv._jax import jax, jnp
from skewsv.model import (
    Layout,
    ModelParams,
    PriorConfig,
    SigmaAlphaPrior,
    centered_logdensity,
    noncentered_from_centered,
    noncentered_logdensity,
    simulate,
    to_unconstrained,
)
from skewsv.smsn import FamilyKind, MixingFamily

# Sixth-order central stencil. A two-point difference at a small step loses
# about eps * |f| / h to cancellation, which swamps near-zero gradient
# components when |f| is in the hundreds.
FD_STEP = 2e-3
FD_OFFSETS = np.array([-3, -2, -1, 1, 2, 3])
FD_WEIGHTS = np.array([-1, 9, -45, 45, -9, 1]) / 60.0
# Guards the division for a component whose gradient is exactly zero.
REL_FLOOR = 1e-6

PRIOR_MENU = {
    "ig": PriorConfig(sigma_alpha=SigmaAlphaPrior.parse("ig:2.5,0.025")),
    "exp": PriorConfig(sigma_alpha=SigmaAlphaPrior.parse("exp")),
    "pcp": PriorConfig(sigma_alpha=SigmaAlphaPrior.parse("pcp:0.5,0.5")),
}
FAMILIES = {
    "n": MixingFamily.normal(),
    "t": MixingFamily.student_t(8.0),
    "slash": MixingFamily.slash(2.5),
}


def true_params(family: MixingFamily) -> ModelParams:
    return ModelParams(
        mu=-0.2, phi=0.95, sigma_h=0.15, alpha1=0.4, kappa=1.0, sigma_alpha=0.1, family=family
    )


def random_points(family: MixingFamily, T: int, n: int, seed: int, noncentered: bool):
    """Seeded points near a simulated truth, jittered by N(0, 0.1^2) per coordinate."""
    rng = np.random.default_rng(seed)
    data, lat = simulate(true_params(family), T, rng)
    x = to_unconstrained(true_params(family), lat)
    if noncentered:
        x = noncentered_from_centered(x, Layout(family.kind, False, T))
    return data.y, x + 0.1 * rng.standard_normal((n, x.size))


def fd_relative_errors(f, x, y, step=FD_STEP):
    """Per-coordinate error of the reverse-mode gradient against central differences."""
    grad = np.asarray(jax.jit(jax.grad(f))(jnp.asarray(x), y))
    eye = np.eye(x.size)
    fv = jax.jit(jax.vmap(f, in_axes=(0, None)))
    fd = sum(w * np.asarray(fv(x + k * step * eye, y)) for w, k in zip(FD_WEIGHTS, FD_OFFSETS)) / step
    return np.abs(grad - fd) / np.maximum(np.abs(fd), REL_FLOOR)


def grid_max_errors(T=50, n=20, seed=0):
    """Max error over ``n`` points for every (family, prior, target) cell."""
    out = {}
    for fi, (fname, fam) in enumerate(FAMILIES.items()):
        for pi, (pname, prior) in enumerate(PRIOR_MENU.items()):
            for nc in (False, True):
                make = noncentered_logdensity if nc else centered_logdensity
                f = make(fam.kind, False, prior)
                y, xs = random_points(fam, T, n, seed + 31 * fi + 7 * pi, nc)
                y = jnp.asarray(y)
                err = max(float(fd_relative_errors(f, x, y).max()) for x in xs)
                out[(fname, pname, "noncentered" if nc else "centered")] = err
    return out


__all__ = ["FamilyKind", "grid_max_errors", "fd_relative_errors", "random_points", "FAMILIES", "PRIOR_MENU"]
