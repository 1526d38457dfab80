"""Layered two-particle circuit engine: validation, evolution, marginals."""

import numpy as np
import pytest

from pilotpath.circuit import (
    CircuitLayer,
    JointState,
    ModeSpinBasis,
    apply_layer,
    dense_unitary,
    evolve_circuit,
    inverse_layers,
    marginal_probability,
)
from pilotpath.errors import ValidationError

from conftest import (
    kron_evolve,
    make_rng,
    product_joint,
    random_layers,
    random_state_vector,
    random_unitary,
)


def test_basis_flatten_round_trip():
    basis = ModeSpinBasis(3, 2, 4, 2)
    assert basis.dim_a == 6 and basis.dim_b == 8
    for mode in range(3):
        for spin in range(2):
            assert basis.unflat_a(basis.flat_a(mode, spin)) == (mode, spin)
    for mode in range(4):
        for spin in range(2):
            assert basis.unflat_b(basis.flat_b(mode, spin)) == (mode, spin)


def test_layer_rejects_non_unitary():
    good = np.eye(4, dtype=np.complex128)
    bad = good.copy()
    bad[0, 0] = 1.5
    with pytest.raises(ValidationError):
        CircuitLayer(bad, good)
    with pytest.raises(ValidationError):
        CircuitLayer(good, bad)


def test_layer_rejects_bad_phase_tables():
    u = np.eye(4, dtype=np.complex128)
    with pytest.raises(ValidationError):
        CircuitLayer(u, u, phases=np.zeros((4, 3)))
    with pytest.raises(ValidationError):
        CircuitLayer(u, u, phases=np.full((4, 4), 1j))
    with pytest.raises(ValidationError):
        CircuitLayer(u, u, phases=np.full((4, 4), np.nan))


def test_coupling_factor_is_pure_phase():
    rng = make_rng(7)
    u = np.eye(4, dtype=np.complex128)
    layer = CircuitLayer(u, u, phases=rng.uniform(-np.pi, np.pi, (4, 4)))
    factor = layer.coupling_factor()
    assert np.max(np.abs(np.abs(factor) - 1.0)) < 1e-14
    assert CircuitLayer(u, u).coupling_factor() is None


def test_joint_state_requires_unit_norm():
    basis = ModeSpinBasis(2, 2, 2, 2)
    amps = np.zeros((4, 4), dtype=np.complex128)
    amps[0, 0] = 0.7
    with pytest.raises(ValidationError):
        JointState(basis, amps)


def test_joint_state_amps_are_immutable():
    basis = ModeSpinBasis(2, 2, 2, 2)
    state = product_joint(basis, random_state_vector(4, make_rng(1)), random_state_vector(4, make_rng(2)))
    with pytest.raises(ValueError):
        state.amps[0, 0] = 0.0


def test_from_product_matches_outer_product():
    rng = make_rng(3)
    basis = ModeSpinBasis(3, 2, 2, 2)
    psi1 = random_state_vector(6, rng)
    psi2 = random_state_vector(4, rng)
    state = product_joint(basis, psi1, psi2)
    assert np.max(np.abs(state.amps - np.outer(psi1, psi2))) < 1e-15
    assert state.tensor4().shape == (3, 2, 2, 2)


@pytest.mark.parametrize("seed", range(8))
def test_evolution_matches_flat_kronecker_oracle(seed):
    """Matrix-form evolution equals the flat-vector Kronecker reference."""
    rng = make_rng(1000 + seed)
    modes_a = int(rng.integers(2, 5))
    modes_b = int(rng.integers(2, 5))
    n = int(rng.integers(1, 5))
    basis = ModeSpinBasis(modes_a, 2, modes_b, 2)
    layers = random_layers(basis, n, rng, coupling_scale=0.9)
    psi1 = random_state_vector(basis.dim_a, rng)
    psi2 = random_state_vector(basis.dim_b, rng)
    final = evolve_circuit(product_joint(basis, psi1, psi2), layers)
    expected = kron_evolve(layers, psi1, psi2)
    assert np.max(np.abs(final.amps - expected)) < 1e-10
    assert final.layer == n


def test_evolution_history_records_every_layer():
    rng = make_rng(11)
    basis = ModeSpinBasis(2, 2, 2, 2)
    layers = random_layers(basis, 3, rng)
    state0 = product_joint(basis, random_state_vector(4, rng), random_state_vector(4, rng))
    history = evolve_circuit(state0, layers, keep_history=True)
    assert len(history) == 4
    assert [s.layer for s in history] == [0, 1, 2, 3]
    assert np.max(np.abs(history[0].amps - state0.amps)) == 0.0


def test_marginal_probability_matches_direct_sum():
    rng = make_rng(21)
    basis = ModeSpinBasis(3, 2, 2, 2)
    layers = random_layers(basis, 2, rng, coupling_scale=0.5)
    state = evolve_circuit(
        product_joint(basis, random_state_vector(6, rng), random_state_vector(4, rng)), layers
    )
    table_a = marginal_probability(state, "a")
    table_b = marginal_probability(state, "b")
    t = state.tensor4()
    ref_a = np.einsum("msjt,msjt->m", t.conj(), t).real
    ref_b = np.einsum("msjt,msjt->j", t.conj(), t).real
    assert np.max(np.abs(table_a - ref_a)) < 1e-14
    assert np.max(np.abs(table_b - ref_b)) < 1e-14
    assert abs(table_a.sum() - 1.0) < 1e-10
    assert abs(marginal_probability(state, "a", mode=1) - ref_a[1]) < 1e-14


def test_marginal_ignores_other_particles_operations_without_couplings():
    """With no phase tables the first particle's marginal never sees u_b."""
    rng = make_rng(31)
    basis = ModeSpinBasis(3, 2, 3, 2)
    layers = random_layers(basis, 3, rng)
    replaced = [CircuitLayer(l.u_a, random_unitary(basis.dim_b, rng)) for l in layers]
    psi1 = random_state_vector(basis.dim_a, rng)
    psi2 = random_state_vector(basis.dim_b, rng)
    m1 = marginal_probability(evolve_circuit(product_joint(basis, psi1, psi2), layers), "a")
    m2 = marginal_probability(evolve_circuit(product_joint(basis, psi1, psi2), replaced), "a")
    assert np.max(np.abs(m1 - m2)) < 1e-14


def test_marginal_ignores_final_layer_replacement_even_with_couplings():
    # replacing u_b after the last coupling acts cannot move particle a's marginal
    rng = make_rng(37)
    basis = ModeSpinBasis(2, 2, 3, 2)
    layers = random_layers(basis, 2, rng, coupling_scale=0.8)
    tail = CircuitLayer(random_unitary(basis.dim_a, rng), random_unitary(basis.dim_b, rng))
    tail_alt = CircuitLayer(tail.u_a, random_unitary(basis.dim_b, rng))
    psi1 = random_state_vector(basis.dim_a, rng)
    psi2 = random_state_vector(basis.dim_b, rng)
    m1 = marginal_probability(
        evolve_circuit(product_joint(basis, psi1, psi2), layers + [tail]), "a"
    )
    m2 = marginal_probability(
        evolve_circuit(product_joint(basis, psi1, psi2), layers + [tail_alt]), "a"
    )
    assert np.max(np.abs(m1 - m2)) < 1e-14


@pytest.mark.parametrize("seed", range(4))
def test_dense_unitary_composes_the_layers(seed):
    rng = make_rng(500 + seed)
    basis = ModeSpinBasis(int(rng.integers(2, 5)), 2, int(rng.integers(2, 5)), 2)
    n = int(rng.integers(1, 5))
    layers = random_layers(basis, n, rng, coupling_scale=0.7)
    dense = dense_unitary(layers, basis)
    dim = basis.dim_a * basis.dim_b
    assert np.max(np.abs(dense.conj().T @ dense - np.eye(dim))) < 1e-10
    psi1 = random_state_vector(basis.dim_a, rng)
    psi2 = random_state_vector(basis.dim_b, rng)
    final = evolve_circuit(product_joint(basis, psi1, psi2), layers)
    flat = dense @ np.kron(psi1, psi2)
    assert np.max(np.abs(final.amps.reshape(-1) - flat)) < 1e-10


def test_inverse_layers_undo_the_evolution():
    rng = make_rng(41)
    basis = ModeSpinBasis(3, 2, 2, 2)
    layers = random_layers(basis, 3, rng, coupling_scale=1.0)
    state0 = product_joint(basis, random_state_vector(6, rng), random_state_vector(4, rng))
    forward = evolve_circuit(state0, layers)
    back = forward
    for layer in inverse_layers(layers):
        back = apply_layer(back, layer)
    assert np.max(np.abs(back.amps - state0.amps)) < 1e-12


def test_documented_two_layer_circuit_amplitudes():
    """Fixed small circuit against amplitudes frozen from the flat reference.

    Layer 1: mode mixer on particle a, spin rotation (pi/6) on particle b,
    phase table theta[j, k] = (pi/4) * ((j * k) mod 3).  Layer 2: spin mixer
    on a, mode mixer on b, no coupling.  Start: (|0,up> + i |1,down>)/sqrt(2)
    times |0,down>.
    """
    h2 = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
    i2 = np.eye(2, dtype=np.complex128)
    rot = np.array(
        [
            [np.cos(np.pi / 6), -np.sin(np.pi / 6)],
            [np.sin(np.pi / 6), np.cos(np.pi / 6)],
        ],
        dtype=np.complex128,
    )
    theta = (np.pi / 4) * np.fromfunction(lambda j, k: (j * k) % 3, (4, 4))
    layers = [
        CircuitLayer(np.kron(h2, i2), np.kron(i2, rot), phases=theta),
        CircuitLayer(np.kron(i2, h2), np.kron(h2, i2)),
    ]
    basis = ModeSpinBasis(2, 2, 2, 2)
    psi1 = np.zeros(4, dtype=np.complex128)
    psi1[0] = 1.0 / np.sqrt(2)
    psi1[3] = 1j / np.sqrt(2)
    psi2 = np.zeros(4, dtype=np.complex128)
    psi2[1] = 1.0
    final = evolve_circuit(product_joint(basis, psi1, psi2), layers)
    expected = np.array(
        [
            [
                -0.12499999999999994 - 0.12499999999999994j,
                +0.063413242022161032 + 0.15309310892394856j,
                -0.12499999999999994 - 0.12499999999999994j,
                +0.063413242022161032 + 0.15309310892394856j,
            ],
            [
                -0.12499999999999994 + 0.12499999999999994j,
                +0.36959945987005816 - 0.15309310892394856j,
                -0.12499999999999994 + 0.12499999999999994j,
                +0.36959945987005816 - 0.15309310892394856j,
            ],
            [
                -0.12499999999999994 + 0.12499999999999994j,
                +1.3257190484061332e-17 + 0j,
                -0.12499999999999994 + 0.12499999999999994j,
                +1.3257190484061332e-17 + 0j,
            ],
            [
                -0.12499999999999994 - 0.12499999999999994j,
                +1.3257190484061332e-17 + 0.43301270189221919j,
                -0.12499999999999994 - 0.12499999999999994j,
                +1.3257190484061332e-17 + 0.43301270189221919j,
            ],
        ]
    )
    assert np.max(np.abs(final.amps - expected)) < 1e-12
    marg = marginal_probability(final, "a")
    assert np.max(np.abs(marg - np.array([0.5, 0.5]))) < 1e-12
