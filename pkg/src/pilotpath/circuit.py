"""Layered two-particle circuit engine.

Each particle carries a (location, spin) index pair; a layer applies one
unitary per particle followed by a diagonal phase coupling on the joint
basis.  States are dense complex tensors stored as (dim_a, dim_b) matrices
over the flattened per-particle indices.  All operations are pure; amplitude
arrays are frozen so states behave as immutable snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

UNITARITY_TOL = 1e-12
NORM_TOL = 1e-8


@dataclass(frozen=True)
class ModeSpinBasis:
    """Index bookkeeping for the joint (location, spin) basis of two particles."""

    modes_a: int
    spins_a: int
    modes_b: int
    spins_b: int

    def __post_init__(self) -> None:
        for name in ("modes_a", "spins_a", "modes_b", "spins_b"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be a positive count")

    @property
    def dim_a(self) -> int:
        return self.modes_a * self.spins_a

    @property
    def dim_b(self) -> int:
        return self.modes_b * self.spins_b

    def flat_a(self, mode: int, spin: int) -> int:
        if not (0 <= mode < self.modes_a and 0 <= spin < self.spins_a):
            raise ValidationError("particle-A (mode, spin) out of range")
        return mode * self.spins_a + spin

    def flat_b(self, mode: int, spin: int) -> int:
        if not (0 <= mode < self.modes_b and 0 <= spin < self.spins_b):
            raise ValidationError("particle-B (mode, spin) out of range")
        return mode * self.spins_b + spin

    def unflat_a(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.dim_a:
            raise ValidationError("particle-A flat index out of range")
        return divmod(index, self.spins_a)

    def unflat_b(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.dim_b:
            raise ValidationError("particle-B flat index out of range")
        return divmod(index, self.spins_b)


def _as_unitary(u: np.ndarray, dim: int, name: str) -> np.ndarray:
    u = np.asarray(u, dtype=np.complex128)
    if u.shape != (dim, dim):
        raise ValidationError(f"{name} must have shape ({dim}, {dim}), got {u.shape}")
    err = np.max(np.abs(u.conj().T @ u - np.eye(dim)))
    if err > UNITARITY_TOL:
        raise ValidationError(f"{name} is not unitary: max deviation {err:.3e}")
    u = u.copy()
    u.flags.writeable = False
    return u


class CircuitLayer:
    """One evolution layer: per-particle unitaries, then a diagonal phase coupling.

    The coupling is a real phase table over the joint flattened basis; only
    phase-diagonal couplings are representable, by construction.
    """

    def __init__(self, u_a, u_b, phases=None):
        u_a = np.asarray(u_a, dtype=np.complex128)
        u_b = np.asarray(u_b, dtype=np.complex128)
        self.dim_a = u_a.shape[0]
        self.dim_b = u_b.shape[0]
        self.u_a = _as_unitary(u_a, self.dim_a, "u_a")
        self.u_b = _as_unitary(u_b, self.dim_b, "u_b")
        if phases is None:
            self.phases = None
        else:
            phases = np.asarray(phases)
            if np.iscomplexobj(phases):
                raise ValidationError("coupling phase table must be real-valued")
            phases = phases.astype(np.float64)
            if phases.shape != (self.dim_a, self.dim_b):
                raise ValidationError(
                    "coupling phase table must have shape "
                    f"({self.dim_a}, {self.dim_b}), got {phases.shape}"
                )
            if not np.all(np.isfinite(phases)):
                raise ValidationError("coupling phase table contains non-finite entries")
            phases = phases.copy()
            phases.flags.writeable = False
            self.phases = phases

    def coupling_factor(self) -> np.ndarray | None:
        if self.phases is None:
            return None
        return np.exp(1j * self.phases)


def inverse_layers(layers) -> list[CircuitLayer]:
    """Layer sequence undoing the given circuit.

    Each layer acts as (phases after unitaries), so its inverse needs the
    conjugate phases first; that is expressed as two standard layers, a
    phase-only undo followed by the adjoint unitaries.
    """
    undo: list[CircuitLayer] = []
    for layer in reversed(list(layers)):
        eye_a = np.eye(layer.dim_a)
        eye_b = np.eye(layer.dim_b)
        if layer.phases is not None:
            undo.append(CircuitLayer(eye_a, eye_b, -layer.phases))
        undo.append(CircuitLayer(layer.u_a.conj().T, layer.u_b.conj().T))
    return undo


@dataclass(frozen=True)
class JointState:
    """Pure two-particle state over the flattened joint basis."""

    basis: ModeSpinBasis
    amps: np.ndarray
    layer: int = 0

    def __post_init__(self) -> None:
        amps = np.asarray(self.amps, dtype=np.complex128)
        expected = (self.basis.dim_a, self.basis.dim_b)
        if amps.shape != expected:
            raise ValidationError(f"amplitudes must have shape {expected}, got {amps.shape}")
        if not np.all(np.isfinite(amps.view(np.float64))):
            raise ValidationError("amplitudes contain non-finite entries")
        norm_err = abs(float(np.vdot(amps, amps).real) - 1.0)
        if norm_err > NORM_TOL:
            raise ValidationError(f"state is not normalized: |norm^2 - 1| = {norm_err:.3e}")
        amps = amps.copy()
        amps.flags.writeable = False
        object.__setattr__(self, "amps", amps)

    @classmethod
    def from_product(
        cls, basis: ModeSpinBasis, psi_a, psi_b, layer: int = 0
    ) -> "JointState":
        psi_a = np.asarray(psi_a, dtype=np.complex128).reshape(basis.dim_a)
        psi_b = np.asarray(psi_b, dtype=np.complex128).reshape(basis.dim_b)
        return cls(basis, np.outer(psi_a, psi_b), layer=layer)

    def norm_sq(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def tensor4(self) -> np.ndarray:
        """View indexed (location_a, spin_a, location_b, spin_b)."""
        b = self.basis
        return self.amps.reshape(b.modes_a, b.spins_a, b.modes_b, b.spins_b)


def apply_layer(state: JointState, layer: CircuitLayer) -> JointState:
    """Apply the per-particle unitaries, then the diagonal coupling phase."""
    b = state.basis
    if (layer.dim_a, layer.dim_b) != (b.dim_a, b.dim_b):
        raise ValidationError(
            f"layer dims ({layer.dim_a}, {layer.dim_b}) do not match state "
            f"dims ({b.dim_a}, {b.dim_b})"
        )
    amps = layer.u_a @ state.amps @ layer.u_b.T
    factor = layer.coupling_factor()
    if factor is not None:
        amps = amps * factor
    return JointState(b, amps, layer=state.layer + 1)


def evolve_circuit(state0: JointState, layers, keep_history: bool = False):
    """Fold apply_layer over the circuit; optionally keep every intermediate state."""
    history = [state0]
    state = state0
    for layer in layers:
        state = apply_layer(state, layer)
        if keep_history:
            history.append(state)
    return history if keep_history else state


def marginal_probability(state: JointState, particle: str, mode: int | None = None):
    """Mode-occupancy marginal P(particle = mode), spin and partner summed out.

    With mode=None the full probability table over modes is returned.
    """
    if particle not in ("a", "b", "A", "B"):
        raise ValidationError("particle must be 'a' or 'b'")
    t = state.tensor4()
    probs = np.abs(t) ** 2
    if particle in ("a", "A"):
        table = probs.sum(axis=(1, 2, 3))
    else:
        table = probs.sum(axis=(0, 1, 3))
    if mode is None:
        return table
    n_modes = table.shape[0]
    if not 0 <= int(mode) < n_modes:
        raise ValidationError(f"mode {mode} out of range for {n_modes} modes")
    return float(table[int(mode)])


def dense_unitary(layers, basis: ModeSpinBasis) -> np.ndarray:
    """Full joint-space matrix of the circuit, for oracle comparisons.

    Joint flat index is i * dim_b + j, matching kron(u_a, u_b) ordering.
    """
    dim = basis.dim_a * basis.dim_b
    total = np.eye(dim, dtype=np.complex128)
    for layer in layers:
        step = np.kron(layer.u_a, layer.u_b)
        factor = layer.coupling_factor()
        if factor is not None:
            step = factor.reshape(dim, 1) * step
        total = step @ total
    return total
