"""Lattice walk engine: algebra, split steps, currents, continuity."""

import numpy as np
import pytest
import scipy.linalg

from pilotpath.circuit import JointState
from pilotpath.dirac import (
    ALPHA1,
    CHIRAL_SIGNS,
    CHIRAL_V,
    GAMMA0,
    GAMMA1,
    NAMED_SPINORS,
    GammaSet,
    LatticeGrid,
    PotentialField,
    bloch_step_matrix,
    build_dirac_step,
    continuity_residual,
    dirac_currents,
    evolve_two_body,
    gaussian_profile,
    marginal_currents,
    phase_matrices,
    positive_energy_packet,
    positive_energy_spinor,
    run_walk,
    spinor_from_spec,
    to_circuit_layers,
)
from pilotpath.errors import ValidationError
from pilotpath.circuit import evolve_circuit

from conftest import make_rng, spinor_field


def joint_from_fields(grid, psi1, psi2):
    amps = np.outer(psi1.reshape(-1), psi2.reshape(-1))
    return JointState(grid.basis(), amps / np.linalg.norm(amps))


# ----------------------------------------------------------------------------
# Algebra and basis structure


def test_gamma_anticommutators():
    GammaSet().validate()


def test_velocity_matrix_has_zero_diagonal():
    assert np.max(np.abs(np.diagonal(ALPHA1))) == 0.0
    assert np.max(np.abs(ALPHA1 - GAMMA0 @ GAMMA1)) == 0.0


def test_chiral_vectors_diagonalize_the_velocity_matrix():
    for c in range(4):
        v = CHIRAL_V[:, c]
        assert np.max(np.abs(ALPHA1 @ v - CHIRAL_SIGNS[c] * v)) < 1e-15
    assert np.max(np.abs(CHIRAL_V.conj().T @ CHIRAL_V - np.eye(4))) < 1e-15


def test_named_spinors_are_normalized():
    for name, vec in NAMED_SPINORS.items():
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-15, name


def test_spinor_from_spec():
    assert np.max(np.abs(spinor_from_spec("up") - NAMED_SPINORS["up"])) == 0.0
    explicit = spinor_from_spec([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    assert abs(np.linalg.norm(explicit) - 1.0) < 1e-15
    assert abs(explicit[1] - 1j / np.sqrt(2)) < 1e-15
    with pytest.raises(ValidationError):
        spinor_from_spec("sideways")
    with pytest.raises(ValidationError):
        spinor_from_spec([[0.0, 0.0]] * 4)


# ----------------------------------------------------------------------------
# Grid and potential validation


def test_grid_validation():
    with pytest.raises(ValidationError):
        LatticeGrid(1, 1.0, 1.0)
    with pytest.raises(ValidationError):
        LatticeGrid(8, 1.0, 1.5)  # dt must not exceed dx
    with pytest.raises(ValidationError):
        LatticeGrid(8, 1.0, 1.0, boundary="absorbing")
    grid = LatticeGrid(8, 0.5, 0.25, x_min=-2.0)
    assert grid.extent == 4.0
    assert grid.positions()[0] == -2.0


def test_barrier_window_is_half_open():
    grid = LatticeGrid(8, 1.0, 1.0)
    pot = PotentialField.barrier(grid, 0.7, 2.0, 5.0)
    assert np.array_equal(np.flatnonzero(pot.a0), [2, 3, 4])
    with pytest.raises(ValidationError):
        PotentialField(np.zeros(8), np.zeros(7))
    with pytest.raises(ValidationError):
        PotentialField(np.full(8, np.inf), np.zeros(8))


# ----------------------------------------------------------------------------
# Split-step structure


@pytest.mark.parametrize("seed", range(4))
def test_phase_rotation_matches_matrix_exponential(seed):
    """Closed-form per-site rotation equals expm of the on-site generator."""
    rng = make_rng(900 + seed)
    grid = LatticeGrid(6, 1.0, 0.8)
    mass = float(rng.uniform(0.0, 1.2))
    charge = float(rng.uniform(-1.0, 1.0))
    pot = PotentialField(rng.uniform(-1.0, 1.0, 6), rng.uniform(-1.0, 1.0, 6))
    mats = phase_matrices(grid, mass, charge, pot)
    for i in range(6):
        a = mass + charge * pot.a0[i]
        b = -charge * pot.a1[i]
        gen = a * GAMMA0 + b * ALPHA1
        ref = scipy.linalg.expm(-1j * grid.dt * gen)
        assert np.max(np.abs(mats[i] - ref)) < 1e-13


def test_step_dense_matrix_is_unitary():
    rng = make_rng(5)
    for boundary in ("periodic", "reflecting"):
        grid = LatticeGrid(7, 1.0, 0.9, boundary=boundary)
        pot = PotentialField(rng.uniform(-1, 1, 7), rng.uniform(-1, 1, 7))
        step = build_dirac_step(grid, 0.4, 0.8, pot)
        dense = step.dense()
        assert np.max(np.abs(dense.conj().T @ dense - np.eye(28))) < 1e-12


def test_massless_unit_ratio_walk_translates_exactly():
    """With no mass and dt = dx each chirality component hops one site."""
    grid = LatticeGrid(16, 1.0, 1.0)
    step = build_dirac_step(grid, 0.0, 0.0)
    prof = gaussian_profile(grid, 7.0, 1.5)
    psi = spinor_field(prof, NAMED_SPINORS["chirality+"]).reshape(16, 4)
    moved = step.apply_one_body(psi)
    expected = np.roll(psi, 1, axis=0)
    assert np.max(np.abs(moved - expected)) < 1e-13
    psi_m = spinor_field(prof, NAMED_SPINORS["chirality-"]).reshape(16, 4)
    assert np.max(np.abs(step.apply_one_body(psi_m) - np.roll(psi_m, -1, axis=0))) < 1e-13


def test_unitarity_drift_over_500_layers():
    rng = make_rng(17)
    grid = LatticeGrid(12, 1.0, 0.7)
    pot = PotentialField(rng.uniform(-0.5, 0.5, 12), rng.uniform(-0.5, 0.5, 12))
    step = build_dirac_step(grid, 0.35, 1.0, pot)
    psi = rng.normal(size=(12, 4)) + 1j * rng.normal(size=(12, 4))
    psi = psi / np.linalg.norm(psi)
    for _ in range(500):
        psi = step.apply_one_body(psi)
    assert abs(np.linalg.norm(psi) - 1.0) < 1e-10


def test_reflecting_walls_turn_a_packet_around():
    grid = LatticeGrid(24, 1.0, 1.0, boundary="reflecting")
    step = build_dirac_step(grid, 0.0, 0.0)
    prof = np.zeros(24)
    prof[18] = 1.0
    psi = spinor_field(prof, NAMED_SPINORS["chirality+"]).reshape(24, 4)
    x = grid.positions()
    means = []
    for _ in range(14):
        psi = step.apply_one_body(psi)
        means.append(float(np.sum(x * np.sum(np.abs(psi) ** 2, axis=1))))
    assert abs(np.linalg.norm(psi) - 1.0) < 1e-12
    # heads right, hits the wall at site 23, comes back left
    assert means[4] == pytest.approx(23.0)
    assert means[-1] < means[4]


def test_two_body_step_requires_matching_grids():
    grid_a = LatticeGrid(8, 1.0, 1.0)
    grid_b = LatticeGrid(8, 1.0, 0.5)
    state = joint_from_fields(
        grid_a,
        spinor_field(gaussian_profile(grid_a, 3.0, 1.0), NAMED_SPINORS["up"]),
        spinor_field(gaussian_profile(grid_a, 5.0, 1.0), NAMED_SPINORS["up"]),
    )
    with pytest.raises(ValidationError):
        evolve_two_body(state, build_dirac_step(grid_a, 0.1, 0.0), build_dirac_step(grid_b, 0.1, 0.0))


def test_uncoupled_evolution_preserves_product_form():
    rng = make_rng(23)
    grid = LatticeGrid(10, 1.0, 0.8)
    pot = PotentialField(rng.uniform(-0.5, 0.5, 10), np.zeros(10))
    step1 = build_dirac_step(grid, 0.3, 1.0, pot)
    step2 = build_dirac_step(grid, 0.6, 0.0)
    state = joint_from_fields(
        grid,
        spinor_field(gaussian_profile(grid, 3.0, 1.2), NAMED_SPINORS["chirality+"]),
        spinor_field(gaussian_profile(grid, 7.0, 1.2), NAMED_SPINORS["down"]),
    )
    for _ in range(10):
        state = evolve_two_body(state, step1, step2)
    s = np.linalg.svd(state.amps, compute_uv=False)
    assert s[1] < 1e-12


def test_coupling_phases_entangle_a_product_start():
    grid = LatticeGrid(6, 1.0, 1.0)
    step = build_dirac_step(grid, 0.0, 0.0)
    state = joint_from_fields(
        grid,
        spinor_field(gaussian_profile(grid, 2.0, 0.9), NAMED_SPINORS["chirality+"]),
        spinor_field(gaussian_profile(grid, 4.0, 0.9), NAMED_SPINORS["chirality-"]),
    )
    rng = make_rng(29)
    phases = rng.uniform(-np.pi, np.pi, (24, 24))
    coupled = evolve_two_body(state, step, step, coupling_phases=phases)
    s = np.linalg.svd(coupled.amps, compute_uv=False)
    assert s[1] > 1e-3


# ----------------------------------------------------------------------------
# Currents


def walk_history(n_sites=12, n_layers=6, mass=0.3, seed=61, record_states=False):
    rng = make_rng(seed)
    grid = LatticeGrid(n_sites, 1.0, 0.8)
    step1 = build_dirac_step(grid, mass, 0.0)
    step2 = build_dirac_step(grid, 0.0, 0.0)
    x = grid.positions()
    state = joint_from_fields(
        grid,
        spinor_field(gaussian_profile(grid, x[n_sites // 3], 1.4, 0.5), NAMED_SPINORS["chirality+"]),
        spinor_field(gaussian_profile(grid, x[2 * n_sites // 3], 1.4), NAMED_SPINORS["chirality-"]),
    )
    return grid, run_walk(state, grid, step1, step2, n_layers, record_states=record_states)


def test_joint_density_normalization_and_positivity():
    grid, hist = walk_history()
    state = hist.final_state
    d, jx1, jx2 = dirac_currents(state, grid)
    assert abs(np.sum(d) * grid.dx * grid.dx - 1.0) < 1e-10
    assert np.min(d) > -1e-12
    assert not np.iscomplexobj(jx1) and not np.iscomplexobj(jx2)


def test_marginal_currents_match_direct_contraction():
    grid, hist = walk_history()
    state = hist.final_state
    n = grid.n_sites
    t = state.amps.reshape(n, 4, n, 4)
    scale_d = 1.0 / grid.dx**2
    scale_j = (grid.dx / grid.dt) * scale_d
    for particle in (1, 2):
        cur = marginal_currents(state, grid, particle)
        if particle == 1:
            ref_j0 = np.einsum("xayb,xayb->x", t.conj(), t).real * scale_d * grid.dx
            ref_j1 = np.einsum("xayb,ac,xcyb->x", t.conj(), ALPHA1, t).real * scale_j * grid.dx
        else:
            ref_j0 = np.einsum("xayb,xayb->y", t.conj(), t).real * scale_d * grid.dx
            ref_j1 = np.einsum("xayb,bc,xayc->y", t.conj(), ALPHA1, t).real * scale_j * grid.dx
        assert np.max(np.abs(cur.j0 - ref_j0)) < 1e-12
        assert np.max(np.abs(cur.j1 - ref_j1)) < 1e-12
        assert abs(np.sum(cur.j0) * grid.dx - 1.0) < 1e-10


def test_current_speed_is_bounded_by_the_lattice_ratio():
    grid, hist = walk_history()
    vmax = grid.dx / grid.dt
    for layer in range(hist.n_layers + 1):
        for particle in (1, 2):
            cur = hist.current_field(particle, layer)
            assert np.all(np.abs(cur.j1) <= vmax * cur.j0 + 1e-12)


def test_continuity_residual_shrinks_under_refinement():
    resids = []
    for n_sites, steps in ((16, 4), (32, 8)):
        grid = LatticeGrid(n_sites, 16.0 / n_sites, 0.5 * 16.0 / n_sites)
        step = build_dirac_step(grid, 0.3, 0.0)
        state = joint_from_fields(
            grid,
            spinor_field(gaussian_profile(grid, 5.0, 1.8, 0.9), NAMED_SPINORS["chirality+"]),
            spinor_field(gaussian_profile(grid, 11.0, 1.8, -0.9), NAMED_SPINORS["chirality-"]),
        )
        hist = run_walk(state, grid, step, step, steps + 1, record_states=True)
        rep = continuity_residual(hist.states[steps], hist.states[steps + 1], grid, 1)
        resids.append(rep)
    assert resids[1].full < resids[0].full
    assert resids[1].marginal < resids[0].marginal


def test_continuity_rejects_non_consecutive_states():
    grid, hist = walk_history(record_states=True)
    with pytest.raises(ValidationError):
        continuity_residual(hist.states[0], hist.states[2], grid, 1)


# ----------------------------------------------------------------------------
# Spectral constructions


def test_bloch_matrix_is_unitary_and_matches_the_dense_step():
    grid = LatticeGrid(12, 1.0, 0.8)
    mass = 0.45
    step = build_dirac_step(grid, mass, 0.0)
    for k in (0.0, 2.0 * np.pi / 12.0, -4.0 * np.pi / 12.0):
        bloch = bloch_step_matrix(grid, mass, k)
        assert np.max(np.abs(bloch.conj().T @ bloch - np.eye(4))) < 1e-13
        # plane wave times any spinor is an exact eigenchannel of one step
        wave = np.exp(1j * k * grid.positions())
        for spinor in (NAMED_SPINORS["up"], NAMED_SPINORS["chirality+"]):
            psi = wave[:, None] * spinor[None, :] / np.sqrt(12)
            moved = step.apply_one_body(psi)
            expected = wave[:, None] * (bloch @ spinor)[None, :] / np.sqrt(12)
            assert np.max(np.abs(moved - expected)) < 1e-13


def test_positive_energy_spinor_needs_a_mass_gap():
    grid = LatticeGrid(16, 1.0, 0.5)
    with pytest.raises(ValidationError):
        positive_energy_spinor(grid, 0.0, 0.3)
    u = positive_energy_spinor(grid, 0.5, 0.3)
    assert abs(np.linalg.norm(u) - 1.0) < 1e-12


def test_positive_energy_packet_moves_with_its_momentum():
    grid = LatticeGrid(48, 0.5, 0.25)
    psi = positive_energy_packet(grid, 0.35, 8.0, 2.0, 0.8)
    assert abs(np.linalg.norm(psi) - 1.0) < 1e-12
    step = build_dirac_step(grid, 0.35, 0.0)
    x = grid.positions()

    def mean(p):
        return float(np.sum(x * np.sum(np.abs(p) ** 2, axis=1)))

    m0 = mean(psi)
    for _ in range(12):
        psi = step.apply_one_body(psi)
    assert mean(psi) > m0 + 0.5


# ----------------------------------------------------------------------------
# Run orchestration


def test_run_walk_records_shapes_and_options():
    grid, hist = walk_history(n_layers=5, record_states=True)
    assert hist.density1.shape == (6, 12)
    assert hist.joint.shape == (6, 12, 12)
    assert len(hist.states) == 6
    assert hist.final_state.layer == 5
    _, lean = walk_history(n_layers=5)
    assert lean.states is None


def test_run_walk_rejects_out_of_range_coupling_layers():
    grid = LatticeGrid(6, 1.0, 1.0)
    step = build_dirac_step(grid, 0.0, 0.0)
    state = joint_from_fields(
        grid,
        spinor_field(gaussian_profile(grid, 2.0, 0.9), NAMED_SPINORS["up"]),
        spinor_field(gaussian_profile(grid, 4.0, 0.9), NAMED_SPINORS["up"]),
    )
    with pytest.raises(ValidationError):
        run_walk(state, grid, step, step, 3, couplings={3: np.zeros((24, 24))})


def test_circuit_view_of_a_walk_reproduces_the_final_state():
    """Dense circuit layers built from the walk evolve to the same state."""
    rng = make_rng(71)
    grid = LatticeGrid(8, 1.0, 0.9)
    pot = PotentialField(rng.uniform(-0.4, 0.4, 8), np.zeros(8))
    step1 = build_dirac_step(grid, 0.25, 1.0, pot)
    step2 = build_dirac_step(grid, 0.5, 0.0)
    couplings = {1: rng.uniform(-np.pi, np.pi, (32, 32))}
    state0 = joint_from_fields(
        grid,
        spinor_field(gaussian_profile(grid, 2.0, 1.1), NAMED_SPINORS["chirality+"]),
        spinor_field(gaussian_profile(grid, 6.0, 1.1), NAMED_SPINORS["down"]),
    )
    hist = run_walk(state0, grid, step1, step2, 3, couplings=couplings)
    layers = to_circuit_layers(step1, step2, 3, couplings)
    via_circuit = evolve_circuit(JointState(grid.basis(), state0.amps), layers)
    assert np.max(np.abs(via_circuit.amps - hist.final_state.amps)) < 1e-12
