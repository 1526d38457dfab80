"""Shared builders for the test suite.

The dense evolution oracle here is deliberately independent of the package:
it flattens the joint state to a single vector and multiplies explicit
Kronecker-product step matrices, whereas the engine keeps the state as a
matrix and applies the factors from either side.
"""

import numpy as np
import pytest
from scipy.stats import unitary_group

from pilotpath.circuit import CircuitLayer, JointState, ModeSpinBasis
from pilotpath.dirac import (
    LatticeGrid,
    NAMED_SPINORS,
    build_dirac_step,
    gaussian_profile,
    to_circuit_layers,
)
from pilotpath.paths import PathContext


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    if dim == 1:
        phase = np.exp(1j * rng.uniform(0.0, 2.0 * np.pi))
        return np.array([[phase]], dtype=np.complex128)
    return unitary_group.rvs(dim, random_state=rng)


def random_layers(
    basis: ModeSpinBasis,
    n: int,
    rng: np.random.Generator,
    coupling_scale: float = 0.0,
) -> list[CircuitLayer]:
    """n random layers; coupling_scale > 0 adds a random phase table to each."""
    layers = []
    for _ in range(n):
        phases = None
        if coupling_scale > 0.0:
            phases = coupling_scale * rng.uniform(-np.pi, np.pi, (basis.dim_a, basis.dim_b))
        layers.append(
            CircuitLayer(random_unitary(basis.dim_a, rng), random_unitary(basis.dim_b, rng), phases)
        )
    return layers


def random_state_vector(dim: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def kron_evolve(
    layers: list[CircuitLayer], psi1: np.ndarray, psi2: np.ndarray
) -> np.ndarray:
    """Reference evolution: flat vector times explicit Kronecker factors.

    Returns the final joint amplitudes as a (dim_a, dim_b) matrix.
    """
    d1, d2 = psi1.shape[0], psi2.shape[0]
    vec = np.kron(psi1, psi2)
    for layer in layers:
        step = np.kron(layer.u_a, layer.u_b)
        if layer.phases is not None:
            step = np.exp(1j * layer.phases).reshape(-1)[:, None] * step
        vec = step @ vec
    return vec.reshape(d1, d2)


def product_joint(basis: ModeSpinBasis, psi1: np.ndarray, psi2: np.ndarray) -> JointState:
    return JointState.from_product(basis, psi1, psi2)


# ----------------------------------------------------------------------------
# Small lattice systems


def truncated_profile(grid: LatticeGrid, center_site: int, radius: int) -> np.ndarray:
    """Gaussian cut to exact zeros outside center_site +- radius sites.

    Exact sparsity keeps path enumeration narrow: with spinor-diagonal
    phase rotations the per-layer out-degree stays at the shift count.
    """
    x = grid.positions()
    full = gaussian_profile(grid, x[center_site], max(radius / 2.0, 0.75) * grid.dx)
    dist = np.abs(np.arange(grid.n_sites) - center_site)
    dist = np.minimum(dist, grid.n_sites - dist)
    prof = np.where(dist <= radius, full, 0.0)
    return prof / np.linalg.norm(prof)


def spinor_field(profile: np.ndarray, spinor: np.ndarray) -> np.ndarray:
    return (profile[:, None] * spinor[None, :]).reshape(-1)


def small_walk_context(
    n_sites: int,
    n_layers: int,
    mass1: float,
    mass2: float,
    rng: np.random.Generator,
    potential1=None,
    radius: int = 0,
    dt_ratio: float = 1.0,
) -> PathContext:
    """Product-start walk wrapped as circuit layers for path conditioning."""
    grid = LatticeGrid(n_sites, 1.0, dt_ratio)
    step1 = build_dirac_step(grid, mass1, 1.0 if potential1 is not None else 0.0, potential1)
    step2 = build_dirac_step(grid, mass2, 0.0)
    layers = to_circuit_layers(step1, step2, n_layers)
    c1 = int(rng.integers(0, n_sites))
    c2 = int(rng.integers(0, n_sites))
    spin_names = list(NAMED_SPINORS)
    s1 = NAMED_SPINORS[spin_names[int(rng.integers(0, len(spin_names)))]]
    s2 = NAMED_SPINORS[spin_names[int(rng.integers(0, len(spin_names)))]]
    if radius > 0:
        psi1 = spinor_field(truncated_profile(grid, c1, radius), s1)
    else:
        prof = np.zeros(n_sites)
        prof[c1] = 1.0
        psi1 = spinor_field(prof, s1)
    psi2 = spinor_field(gaussian_profile(grid, grid.positions()[c2], 1.5), s2)
    return PathContext(layers, grid.basis(), psi1, psi2, grid=grid)


@pytest.fixture
def rng():
    return make_rng(20260817)
