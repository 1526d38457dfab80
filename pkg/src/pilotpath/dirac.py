"""Two-body Dirac engine on a 1D periodic lattice with 4-component spinors.

Natural units, hbar = c = 1.  Each evolution layer is a split-step local
unitary: an on-site phase rotation generated by (m + q*A0)*g0 - q*A1*g0g1,
followed by a spinor-conditioned nearest-neighbor shift.  The step is exactly
unitary and couples a site only to its nearest neighbors; with dt = dx its
continuum limit is the free-plus-potential Dirac Hamiltonian for each
particle separately (the two-body generator carries no interaction term).

Densities and currents are exposed in continuum normalization: the marginal
density integrates to one with weight dx, and the spatial current carries a
dx/dt factor so that the density/current pair satisfies the continuity
equation in the refinement limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circuit import CircuitLayer, JointState, ModeSpinBasis
from .errors import DegenerateDensityError, ValidationError

SPINOR_DIM = 4

GAMMA0 = np.diag([1.0, 1.0, -1.0, -1.0]).astype(np.complex128)

_SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
_SY = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=np.complex128)
_SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)


def _off_block(sigma: np.ndarray) -> np.ndarray:
    out = np.zeros((4, 4), dtype=np.complex128)
    out[:2, 2:] = sigma
    out[2:, :2] = -sigma
    return out


GAMMA1 = _off_block(_SX)
GAMMA2 = _off_block(_SY)
GAMMA3 = _off_block(_SZ)

# Velocity matrix along the lattice axis; its diagonal vanishes identically,
# which is what makes the reconstructed spatial current a pure cross term.
ALPHA1 = GAMMA0 @ GAMMA1

# Chirality eigenbasis of ALPHA1.  Columns 0,1 have eigenvalue +1 and shift
# right; columns 2,3 have eigenvalue -1 and shift left.  Columns (0,2) and
# (1,3) are reflection partners within the same spinor doublet.
_S2 = 1.0 / np.sqrt(2.0)
CHIRAL_V = np.array(
    [
        [_S2, 0.0, _S2, 0.0],
        [0.0, _S2, 0.0, _S2],
        [0.0, _S2, 0.0, -_S2],
        [_S2, 0.0, -_S2, 0.0],
    ],
    dtype=np.complex128,
)
CHIRAL_SIGNS = (1, 1, -1, -1)

for _m in (GAMMA0, GAMMA1, GAMMA2, GAMMA3, ALPHA1, CHIRAL_V):
    _m.flags.writeable = False

MINKOWSKI_SIGNS = (1.0, -1.0, -1.0, -1.0)


@dataclass(frozen=True)
class GammaSet:
    """The Dirac-representation gamma matrices plus identity."""

    gamma0: np.ndarray = field(default_factory=lambda: GAMMA0)
    gamma1: np.ndarray = field(default_factory=lambda: GAMMA1)
    gamma2: np.ndarray = field(default_factory=lambda: GAMMA2)
    gamma3: np.ndarray = field(default_factory=lambda: GAMMA3)

    @property
    def identity(self) -> np.ndarray:
        return np.eye(SPINOR_DIM, dtype=np.complex128)

    def all(self) -> list[np.ndarray]:
        return [self.gamma0, self.gamma1, self.gamma2, self.gamma3]

    def velocity(self, i: int) -> np.ndarray:
        if i not in (1, 2, 3):
            raise ValidationError("spatial index must be 1, 2, or 3")
        return self.gamma0 @ self.all()[i]

    def validate(self) -> None:
        """Check the anticommutation table and the diagonal structure."""
        mats = self.all()
        if np.max(np.abs(self.gamma0 - np.diag(np.diag(self.gamma0)))) != 0.0:
            raise ValidationError("gamma0 must be diagonal")
        if list(np.diag(self.gamma0).real) != [1.0, 1.0, -1.0, -1.0]:
            raise ValidationError("gamma0 diagonal must be (+1, +1, -1, -1)")
        for mu in range(4):
            for nu in range(4):
                anti = mats[mu] @ mats[nu] + mats[nu] @ mats[mu]
                want = 2.0 * MINKOWSKI_SIGNS[mu] * np.eye(SPINOR_DIM) if mu == nu else 0.0
                if np.max(np.abs(anti - want)) > 1e-14:
                    raise ValidationError(f"anticommutator ({mu},{nu}) violated")
        for i in (1, 2, 3):
            if np.max(np.abs(np.diag(self.velocity(i)))) != 0.0:
                raise ValidationError(f"gamma0 @ gamma{i} must have an exactly zero diagonal")


@dataclass(frozen=True)
class LatticeGrid:
    """Shared 1D lattice for both particles."""

    n_sites: int
    dx: float
    dt: float
    x_min: float = 0.0
    boundary: str = "periodic"

    def __post_init__(self) -> None:
        if self.n_sites < 2:
            raise ValidationError("lattice needs at least 2 sites")
        if not (self.dx > 0.0 and self.dt > 0.0):
            raise ValidationError("dx and dt must be positive")
        if self.dt > self.dx * (1.0 + 1e-12):
            raise ValidationError(
                f"dt/dx = {self.dt / self.dx:.6g} > 1: signal would outrun one site per step"
            )
        if self.boundary not in ("periodic", "reflecting"):
            raise ValidationError("boundary must be 'periodic' or 'reflecting'")

    @property
    def extent(self) -> float:
        return self.n_sites * self.dx

    def positions(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_sites)

    def basis(self) -> ModeSpinBasis:
        return ModeSpinBasis(self.n_sites, SPINOR_DIM, self.n_sites, SPINOR_DIM)


@dataclass(frozen=True)
class PotentialField:
    """Static per-site potential tables for one particle."""

    a0: np.ndarray
    a1: np.ndarray

    def __post_init__(self) -> None:
        a0 = np.asarray(self.a0, dtype=np.float64)
        a1 = np.asarray(self.a1, dtype=np.float64)
        if a0.ndim != 1 or a0.shape != a1.shape:
            raise ValidationError("potential tables must be equal-length 1D real arrays")
        if not (np.all(np.isfinite(a0)) and np.all(np.isfinite(a1))):
            raise ValidationError("potential tables must be finite")
        object.__setattr__(self, "a0", a0)
        object.__setattr__(self, "a1", a1)

    @classmethod
    def free(cls, grid: LatticeGrid) -> "PotentialField":
        zeros = np.zeros(grid.n_sites)
        return cls(zeros, zeros.copy())

    @classmethod
    def constant_a0(cls, grid: LatticeGrid, v0: float) -> "PotentialField":
        return cls(np.full(grid.n_sites, float(v0)), np.zeros(grid.n_sites))

    @classmethod
    def barrier(cls, grid: LatticeGrid, v0: float, lo: float, hi: float) -> "PotentialField":
        x = grid.positions()
        a0 = np.where((x >= lo) & (x < hi), float(v0), 0.0)
        return cls(a0, np.zeros(grid.n_sites))


def phase_matrices(grid: LatticeGrid, mass: float, charge: float, potential: PotentialField) -> np.ndarray:
    """Per-site rotation exp(-i dt [(m + q A0) g0 - q A1 g0g1]).

    The generator squares to (a^2 + b^2) * identity because g0 and g0g1
    anticommute, so the exponential has the closed form cos - i sin/w * H.
    """
    if potential.a0.shape[0] != grid.n_sites:
        raise ValidationError("potential tables must match the grid size")
    a = mass + charge * potential.a0
    b = -charge * potential.a1
    w = np.hypot(a, b)
    ang = grid.dt * w
    cos = np.cos(ang)
    # sin(dt*w)/w, finite at w = 0.
    sinc = np.where(w > 0.0, np.sin(ang) / np.where(w > 0.0, w, 1.0), grid.dt)
    h = a[:, None, None] * GAMMA0[None, :, :] + b[:, None, None] * ALPHA1[None, :, :]
    eye = np.eye(SPINOR_DIM, dtype=np.complex128)
    return cos[:, None, None] * eye[None, :, :] - 1j * sinc[:, None, None] * h


class WalkStep:
    """One-body split-step layer: on-site phase rotation, then chirality shift."""

    def __init__(self, grid: LatticeGrid, phase_mats: np.ndarray):
        phase_mats = np.asarray(phase_mats, dtype=np.complex128)
        if phase_mats.shape != (grid.n_sites, SPINOR_DIM, SPINOR_DIM):
            raise ValidationError("phase matrices must have shape (n_sites, 4, 4)")
        self.grid = grid
        self.phase_mats = phase_mats
        self.phase_mats.flags.writeable = False

    def _shift(self, chi: np.ndarray, axis: int) -> np.ndarray:
        """Move chirality components one site along the given axis."""
        out = np.empty_like(chi)
        idx_plus = [0, 1]
        idx_minus = [2, 3]
        if self.grid.boundary == "periodic":
            for c in idx_plus:
                out[_col(axis, c)] = np.roll(chi[_col(axis, c)], 1, axis=axis)
            for c in idx_minus:
                out[_col(axis, c)] = np.roll(chi[_col(axis, c)], -1, axis=axis)
            return out
        # Reflecting walls exchange the paired chirality components at the
        # edges; the map is a permutation of amplitudes, hence exactly unitary.
        for plus, minus in ((0, 2), (1, 3)):
            p = chi[_col(axis, plus)]
            m = chi[_col(axis, minus)]
            new_p = np.empty_like(p)
            new_m = np.empty_like(m)
            sl_from = _axslice(axis, 0, -1)
            sl_to = _axslice(axis, 1, None)
            new_p[sl_to] = p[sl_from]
            new_p[_axslice(axis, 0, 1)] = m[_axslice(axis, 0, 1)]
            new_m[_axslice(axis, 0, -1)] = m[_axslice(axis, 1, None)]
            new_m[_axslice(axis, -1, None)] = p[_axslice(axis, -1, None)]
            out[_col(axis, plus)] = new_p
            out[_col(axis, minus)] = new_m
        return out

    def apply_one_body(self, psi: np.ndarray) -> np.ndarray:
        psi = np.einsum("xab,xb->xa", self.phase_mats, psi)
        chi = np.einsum("sa,xa->xs", CHIRAL_V.conj().T, psi)
        chi = self._shift(chi, axis=0)
        return np.einsum("as,xs->xa", CHIRAL_V, chi)

    def apply_first(self, amps: np.ndarray) -> np.ndarray:
        """Act on the first particle of a joint (dim_a, dim_b) amplitude block."""
        n = self.grid.n_sites
        t = amps.reshape(n, SPINOR_DIM, -1)
        t = np.einsum("xab,xbk->xak", self.phase_mats, t)
        chi = np.einsum("sa,xak->xsk", CHIRAL_V.conj().T, t)
        chi = self._shift(chi, axis=0)
        t = np.einsum("as,xsk->xak", CHIRAL_V, chi)
        return t.reshape(amps.shape)

    def apply_second(self, amps: np.ndarray) -> np.ndarray:
        """Act on the second particle of a joint (dim_a, dim_b) amplitude block."""
        n = self.grid.n_sites
        t = amps.reshape(-1, n, SPINOR_DIM)
        t = np.einsum("yab,kyb->kya", self.phase_mats, t)
        chi = np.einsum("sb,kyb->kys", CHIRAL_V.conj().T, t)
        chi = self._shift(chi, axis=1)
        t = np.einsum("bs,kys->kyb", CHIRAL_V, chi)
        return t.reshape(amps.shape)

    def dense(self) -> np.ndarray:
        """Dense (4N, 4N) matrix of the step, built column-by-column."""
        n = self.grid.n_sites
        dim = n * SPINOR_DIM
        out = np.empty((dim, dim), dtype=np.complex128)
        basis_vec = np.zeros((n, SPINOR_DIM), dtype=np.complex128)
        for col in range(dim):
            basis_vec.reshape(-1)[col] = 1.0
            out[:, col] = self.apply_one_body(basis_vec).reshape(-1)
            basis_vec.reshape(-1)[col] = 0.0
        return out


def _col(axis: int, c: int):
    # Index helper selecting chirality column c with the site axis in front.
    if axis == 0:
        return (slice(None), c)
    return (slice(None), slice(None), c)


def _axslice(axis: int, lo, hi):
    sl = slice(lo, hi)
    if axis == 0:
        return (sl,)
    return (slice(None), sl)


def build_dirac_step(
    grid: LatticeGrid, mass: float, charge: float, potential: PotentialField | None = None
) -> WalkStep:
    """Split-step one-body layer whose continuum limit is the 1D Dirac generator."""
    if potential is None:
        potential = PotentialField.free(grid)
    return WalkStep(grid, phase_matrices(grid, mass, charge, potential))


def evolve_two_body(
    state: JointState,
    step1: WalkStep,
    step2: WalkStep,
    coupling_phases: np.ndarray | None = None,
) -> JointState:
    """One joint layer: each particle's step independently, then optional phases.

    The two-body generator has no interaction term, so correlations evolve
    only through the initial state unless explicit phase couplings are given.
    """
    if step1.grid != step2.grid:
        raise ValidationError("both steps must be built on the same grid")
    if state.basis != step1.grid.basis():
        raise ValidationError("state basis does not match the step grid")
    amps = step1.apply_first(state.amps)
    amps = step2.apply_second(amps)
    if coupling_phases is not None:
        phases = np.asarray(coupling_phases, dtype=np.float64)
        if phases.shape != amps.shape:
            raise ValidationError("coupling phase table must match the joint state shape")
        amps = amps * np.exp(1j * phases)
    return JointState(state.basis, amps, layer=state.layer + 1)


# ----------------------------------------------------------------------------
# Densities and currents


@dataclass(frozen=True)
class CurrentField:
    """Marginal density/current pair for one particle at one layer."""

    grid: LatticeGrid
    j0: np.ndarray
    j1: np.ndarray
    layer: int = 0

    def __post_init__(self) -> None:
        j0 = np.asarray(self.j0, dtype=np.float64)
        j1 = np.asarray(self.j1, dtype=np.float64)
        if j0.shape != (self.grid.n_sites,) or j1.shape != (self.grid.n_sites,):
            raise ValidationError("current tables must be per-site 1D arrays")
        if np.min(j0) < -1e-12:
            raise ValidationError("density must be nonnegative")
        total = float(np.sum(j0) * self.grid.dx)
        if abs(total - 1.0) > 1e-10:
            raise ValidationError(f"density must integrate to 1, got {total!r}")
        object.__setattr__(self, "j0", j0)
        object.__setattr__(self, "j1", j1)
        j0.flags.writeable = False
        j1.flags.writeable = False


def _tensor4(state: JointState, grid: LatticeGrid) -> np.ndarray:
    n = grid.n_sites
    return state.amps.reshape(n, SPINOR_DIM, n, SPINOR_DIM)


def dirac_currents(state: JointState, grid: LatticeGrid):
    """Pointwise two-body bilinears (density, current along x1, current along x2).

    Values are continuum-normalized: density integrates to one with weight
    dx^2 and currents carry the lattice signal speed dx/dt.
    """
    t = _tensor4(state, grid)
    scale_d = 1.0 / (grid.dx * grid.dx)
    scale_j = (grid.dx / grid.dt) * scale_d
    density = np.einsum("xayb,xayb->xy", t.conj(), t).real * scale_d
    jx1 = np.einsum("xayb,ac,xcyb->xy", t.conj(), ALPHA1, t) * scale_j
    jx2 = np.einsum("xayb,bd,xayd->xy", t.conj(), ALPHA1, t) * scale_j
    resid = max(np.max(np.abs(jx1.imag)), np.max(np.abs(jx2.imag)))
    if resid > 1e-12:
        raise ValidationError(f"current bilinears acquired imaginary residue {resid:.3e}")
    return density, jx1.real, jx2.real


def marginal_currents(state: JointState, grid: LatticeGrid, particle: int = 1) -> CurrentField:
    """Partner-summed density and current for the requested particle."""
    if particle not in (1, 2):
        raise ValidationError("particle must be 1 or 2")
    t = _tensor4(state, grid)
    scale_d = 1.0 / grid.dx
    scale_j = (grid.dx / grid.dt) * scale_d
    if particle == 1:
        j0 = np.einsum("xayb,xayb->x", t.conj(), t).real * scale_d
        j1 = np.einsum("xayb,ac,xcyb->x", t.conj(), ALPHA1, t) * scale_j
    else:
        j0 = np.einsum("xayb,xayb->y", t.conj(), t).real * scale_d
        j1 = np.einsum("xayb,bd,xayd->y", t.conj(), ALPHA1, t) * scale_j
    if np.max(np.abs(j1.imag)) > 1e-12:
        raise ValidationError("marginal current acquired an imaginary residue")
    return CurrentField(grid, j0, j1.real, layer=state.layer)


def one_body_currents(psi: np.ndarray, grid: LatticeGrid):
    """Density/current pair of a single-particle spinor field, same scaling."""
    scale_d = 1.0 / grid.dx
    scale_j = (grid.dx / grid.dt) * scale_d
    j0 = np.einsum("xa,xa->x", psi.conj(), psi).real * scale_d
    j1 = (np.einsum("xa,ab,xb->x", psi.conj(), ALPHA1, psi) * scale_j).real
    return j0, j1


def _centered_gradient(f: np.ndarray, dx: float, axis: int = 0) -> np.ndarray:
    return (np.roll(f, -1, axis=axis) - np.roll(f, 1, axis=axis)) / (2.0 * dx)


@dataclass(frozen=True)
class ContinuityReport:
    """Max-norm continuity residuals with the refinement metadata attached."""

    full: float
    marginal: float
    dx: float
    dt: float
    layer: int


def continuity_residual(
    state_t: JointState, state_next: JointState, grid: LatticeGrid, particle: int = 1
) -> ContinuityReport:
    """Forward-time, centered-space residual of the two-body and marginal laws."""
    if state_next.layer != state_t.layer + 1:
        raise ValidationError("states must be consecutive layers of one run")
    d_t, jx1_t, jx2_t = dirac_currents(state_t, grid)
    d_n, _, _ = dirac_currents(state_next, grid)
    full = (d_n - d_t) / grid.dt
    full += _centered_gradient(jx1_t, grid.dx, axis=0)
    full += _centered_gradient(jx2_t, grid.dx, axis=1)
    cur_t = marginal_currents(state_t, grid, particle)
    cur_n = marginal_currents(state_next, grid, particle)
    marg = (cur_n.j0 - cur_t.j0) / grid.dt + _centered_gradient(cur_t.j1, grid.dx)
    return ContinuityReport(
        full=float(np.max(np.abs(full))),
        marginal=float(np.max(np.abs(marg))),
        dx=grid.dx,
        dt=grid.dt,
        layer=state_t.layer,
    )


# ----------------------------------------------------------------------------
# Run orchestration


@dataclass
class WalkHistory:
    """Per-layer marginal tables (and optionally joint densities) of one run."""

    grid: LatticeGrid
    n_layers: int
    density1: np.ndarray
    current1: np.ndarray
    density2: np.ndarray
    current2: np.ndarray
    joint: np.ndarray | None
    final_state: JointState
    states: list[JointState] | None = None

    def current_field(self, particle: int, layer: int) -> CurrentField:
        j0 = self.density1[layer] if particle == 1 else self.density2[layer]
        j1 = self.current1[layer] if particle == 1 else self.current2[layer]
        return CurrentField(self.grid, j0, j1, layer=layer)


def _steps_per_layer(steps, n_layers: int) -> list[WalkStep]:
    if isinstance(steps, WalkStep):
        return [steps] * n_layers
    steps = list(steps)
    if len(steps) != n_layers:
        raise ValidationError(f"expected {n_layers} steps, got {len(steps)}")
    return steps


def run_walk(
    state0: JointState,
    grid: LatticeGrid,
    steps1,
    steps2,
    n_layers: int,
    couplings: dict[int, np.ndarray] | None = None,
    record_joint: bool = True,
    record_states: bool = False,
) -> WalkHistory:
    """Evolve a joint state and record per-layer marginal tables.

    couplings maps a layer index (0-based) to a joint phase table applied
    after that layer's per-particle steps.
    """
    seq1 = _steps_per_layer(steps1, n_layers)
    seq2 = _steps_per_layer(steps2, n_layers)
    couplings = couplings or {}
    for k in couplings:
        if not 0 <= int(k) < n_layers:
            raise ValidationError(f"coupling layer index {k} out of range")
    n = grid.n_sites
    density1 = np.empty((n_layers + 1, n))
    current1 = np.empty((n_layers + 1, n))
    density2 = np.empty((n_layers + 1, n))
    current2 = np.empty((n_layers + 1, n))
    joint = np.empty((n_layers + 1, n, n)) if record_joint else None
    states = [state0] if record_states else None

    state = state0
    for layer in range(n_layers + 1):
        cur1 = marginal_currents(state, grid, 1)
        cur2 = marginal_currents(state, grid, 2)
        density1[layer] = cur1.j0
        current1[layer] = cur1.j1
        density2[layer] = cur2.j0
        current2[layer] = cur2.j1
        if record_joint:
            t = _tensor4(state, grid)
            joint[layer] = np.einsum("xayb,xayb->xy", t.conj(), t).real / (grid.dx * grid.dx)
        if layer == n_layers:
            break
        state = evolve_two_body(state, seq1[layer], seq2[layer], couplings.get(layer))
        if record_states:
            states.append(state)
    return WalkHistory(
        grid=grid,
        n_layers=n_layers,
        density1=density1,
        current1=current1,
        density2=density2,
        current2=current2,
        joint=joint,
        final_state=state,
        states=states,
    )


def to_circuit_layers(
    steps1, steps2, n_layers: int, couplings: dict[int, np.ndarray] | None = None
) -> list[CircuitLayer]:
    """Dense CircuitLayer view of a walk, for path conditioning and oracles."""
    seq1 = _steps_per_layer(steps1, n_layers)
    seq2 = _steps_per_layer(steps2, n_layers)
    couplings = couplings or {}
    dense1: dict[int, np.ndarray] = {}
    dense2: dict[int, np.ndarray] = {}
    layers = []
    for t in range(n_layers):
        u1 = dense1.setdefault(id(seq1[t]), seq1[t].dense())
        u2 = dense2.setdefault(id(seq2[t]), seq2[t].dense())
        layers.append(CircuitLayer(u1, u2, couplings.get(t)))
    return layers


# ----------------------------------------------------------------------------
# State constructors


def gaussian_profile(grid: LatticeGrid, center: float, sigma: float, momentum: float = 0.0) -> np.ndarray:
    """Spatial Gaussian amplitude, |psi|^2 standard deviation = sigma.

    Uses the minimal-image displacement so the profile respects the periodic
    extent; tails beyond half the ring are negligible for sigma << extent.
    """
    if sigma <= 0.0:
        raise ValidationError("sigma must be positive")
    x = grid.positions()
    d = x - center
    if grid.boundary == "periodic":
        d = (d + 0.5 * grid.extent) % grid.extent - 0.5 * grid.extent
    amp = np.exp(-(d**2) / (4.0 * sigma**2)) * np.exp(1j * momentum * x)
    norm = np.linalg.norm(amp)
    if norm == 0.0:
        raise DegenerateDensityError("gaussian profile vanished on the grid")
    return amp / norm


NAMED_SPINORS = {
    "up": np.array([1.0, 0.0, 0.0, 0.0], dtype=np.complex128),
    "down": np.array([0.0, 1.0, 0.0, 0.0], dtype=np.complex128),
    "chirality+": CHIRAL_V[:, 0].copy(),
    "chirality+b": CHIRAL_V[:, 1].copy(),
    "chirality-": CHIRAL_V[:, 2].copy(),
    "chirality-b": CHIRAL_V[:, 3].copy(),
}


def bloch_step_matrix(grid: LatticeGrid, mass: float, k: float) -> np.ndarray:
    """Momentum-space 4x4 matrix of one free walk step at wavenumber k."""
    phase = np.exp(-1j * grid.dt * mass * np.diag(GAMMA0))
    shift = np.array([np.exp(-1j * s * k * grid.dx) for s in CHIRAL_SIGNS])
    return (CHIRAL_V * shift) @ CHIRAL_V.conj().T @ np.diag(phase)


def positive_energy_spinor(grid: LatticeGrid, mass: float, k: float) -> np.ndarray:
    """Spinor spanning the forward-energy doublet of the free step at wavenumber k.

    Defined by projecting the rest spinor onto the eigenvectors whose step
    eigenphase is negative (eigenvalue exp(-i E dt) with E > 0).  Requires a
    mass gap so the doublet never touches the zero-phase crossing.
    """
    if mass <= 0.0:
        raise ValidationError("positive-energy projection needs mass > 0")
    vals, vecs = np.linalg.eig(bloch_step_matrix(grid, mass, k))
    angles = np.angle(vals)
    pick = angles < 0.0
    if int(np.sum(pick)) != 2:
        raise ValidationError("forward-energy doublet is not isolated at this wavenumber")
    sub = vecs[:, pick]
    u = sub @ (sub.conj().T @ NAMED_SPINORS["up"])
    nrm = np.linalg.norm(u)
    if nrm < 1e-12:
        u = sub @ (sub.conj().T @ NAMED_SPINORS["down"])
        nrm = np.linalg.norm(u)
    u = u / nrm
    lead = np.argmax(np.abs(u))
    u = u * np.exp(-1j * np.angle(u[lead]))
    return u


def positive_energy_packet(
    grid: LatticeGrid, mass: float, center: float, sigma: float, momentum: float
) -> np.ndarray:
    """Gaussian packet built on the walk's own forward-energy Bloch branch.

    Free of interference between energy branches, so the packet translates
    and spreads smoothly; used by scenarios that need clean guidance fields.
    """
    if grid.boundary != "periodic":
        raise ValidationError("momentum-space construction requires periodic boundaries")
    n = grid.n_sites
    ks = 2.0 * np.pi * np.fft.fftfreq(n, d=grid.dx)
    coef = np.exp(-(sigma**2) * (ks - momentum) ** 2) * np.exp(-1j * ks * center)
    field = np.zeros((n, SPINOR_DIM), dtype=np.complex128)
    for j in range(n):
        if abs(coef[j]) < 1e-300:
            continue
        field += coef[j] * np.exp(1j * ks[j] * grid.positions())[:, None] * positive_energy_spinor(grid, mass, ks[j])[None, :]
    nrm = np.linalg.norm(field)
    if nrm == 0.0:
        raise DegenerateDensityError("packet construction produced an empty field")
    return field / nrm


def spinor_from_spec(spec) -> np.ndarray:
    """Named spinor or explicit 4-component [re, im] list."""
    if isinstance(spec, str):
        if spec not in NAMED_SPINORS:
            raise ValidationError(f"unknown spinor name {spec!r}")
        return NAMED_SPINORS[spec].copy()
    arr = np.asarray(spec, dtype=np.float64)
    if arr.shape != (SPINOR_DIM, 2):
        raise ValidationError("explicit spinor must be a list of four [re, im] pairs")
    vec = arr[:, 0] + 1j * arr[:, 1]
    nrm = np.linalg.norm(vec)
    if nrm == 0.0:
        raise ValidationError("explicit spinor must be nonzero")
    return vec / nrm
