"""Sum-over-paths decomposition of a layered two-particle evolution.

The first particle's dynamics is unraveled into basis paths through its
mode-and-spin space.  Each path carries a complex amplitude, the product of
the one-body matrix elements along it times the initial amplitude at its
starting point, and a partner state: the second particle's initial vector
pushed through its own one-body layers interleaved with the diagonal
coupling phases sliced at the path's current point.

Inner products between partner states of two paths decide how strongly the
pair interferes when densities and currents are rebuilt from the
decomposition.  An overlap of one restores full single-particle coherence;
zero removes that cross term entirely.  The decomposition is exact: summing
amplitude times partner state over all paths with a given endpoint
reproduces the corresponding row of the directly evolved joint state.

Enumeration is exhaustive over nonzero transitions and guarded by explicit
resource caps; it never truncates silently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .circuit import CircuitLayer, JointState, ModeSpinBasis
from .dirac import ALPHA1, SPINOR_DIM, LatticeGrid
from .errors import DegenerateDensityError, PilotPathError, ResourceCapError, ValidationError

OVERLAP_DIAG_TOL = 1e-12
OVERLAP_HERM_TOL = 1e-13
PRODUCT_RANK_TOL = 1e-12


@dataclass(frozen=True)
class PathCaps:
    """Hard limits that turn combinatorial blowup into explicit errors."""

    pair_cap: int = 2_000_000
    memory_cap_bytes: int = 512 * 2**20


@dataclass(frozen=True)
class Path:
    """One basis path of the first particle: (location, spin) per layer."""

    steps: tuple[tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def endpoint(self) -> tuple[int, int]:
        return self.steps[-1]


@dataclass
class PathBundle:
    """All nonzero-amplitude paths sharing one endpoint at one layer."""

    endpoint: tuple[int, int]
    layer: int
    paths: list[Path]
    amplitudes: np.ndarray
    path_ids: np.ndarray


@dataclass
class ConditionalUnitary:
    """Dense partner-particle evolution operator conditioned on one path."""

    matrix: np.ndarray
    path: Path


class PathContext:
    """Layered system prepared for path conditioning.

    Holds the joint layers, the initial one-particle factors (the start must
    be a product state; entangled starts are rejected), and optionally the
    lattice geometry that fixes density and current normalization.
    """

    def __init__(
        self,
        layers: list[CircuitLayer],
        basis: ModeSpinBasis,
        psi1: np.ndarray,
        psi2: np.ndarray,
        grid: LatticeGrid | None = None,
        prune_tol: float = 0.0,
    ):
        psi1 = np.asarray(psi1, dtype=np.complex128).reshape(-1)
        psi2 = np.asarray(psi2, dtype=np.complex128).reshape(-1)
        if psi1.shape[0] != basis.dim_a or psi2.shape[0] != basis.dim_b:
            raise ValidationError("initial factors do not match the basis dimensions")
        n1, n2 = np.linalg.norm(psi1), np.linalg.norm(psi2)
        if n1 == 0.0 or n2 == 0.0:
            raise ValidationError("initial factors must be nonzero")
        for t, layer in enumerate(layers):
            if layer.u_a.shape[0] != basis.dim_a or layer.u_b.shape[0] != basis.dim_b:
                raise ValidationError(f"layer {t} does not match the basis dimensions")
        if grid is not None and basis.dim_a != grid.n_sites * SPINOR_DIM:
            raise ValidationError("grid does not match the first particle's dimension")
        if prune_tol < 0.0:
            raise ValidationError("prune_tol must be nonnegative")
        self.layers = list(layers)
        self.basis = basis
        self.psi1 = psi1 / n1
        self.psi2 = psi2 / n2
        self.grid = grid
        self.prune_tol = float(prune_tol)
        self.psi1.flags.writeable = False
        self.psi2.flags.writeable = False

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @classmethod
    def from_joint_state(
        cls,
        state: JointState,
        layers: list[CircuitLayer],
        grid: LatticeGrid | None = None,
        prune_tol: float = 0.0,
    ) -> "PathContext":
        """Extract product factors from a joint start; reject entangled ones."""
        u, s, vh = np.linalg.svd(state.amps)
        if s.shape[0] > 1 and s[1] > PRODUCT_RANK_TOL * s[0]:
            raise ValidationError(
                "path conditioning needs a product initial state; "
                f"second singular value is {s[1]:.3e}"
            )
        # numpy svd convention: amps[j, k] = u[j, 0] * s[0] * vh[0, k], and
        # amps[j, k] = psi1[j] * psi2[k], so vh's row is psi2 as stored.
        psi1 = u[:, 0]
        psi2 = s[0] * vh[0, :]
        lead = int(np.argmax(np.abs(psi1)))
        rot = np.exp(-1j * np.angle(psi1[lead]))
        return cls(layers, state.basis, psi1 * rot, psi2 * np.conj(rot), grid, prune_tol)

    def swapped(self) -> "PathContext":
        """Same system with the roles of the two particles exchanged."""
        flipped = []
        for layer in self.layers:
            phases = None if layer.phases is None else layer.phases.T
            flipped.append(CircuitLayer(layer.u_b, layer.u_a, phases))
        basis = ModeSpinBasis(
            self.basis.modes_b, self.basis.spins_b, self.basis.modes_a, self.basis.spins_a
        )
        return PathContext(flipped, basis, self.psi2, self.psi1, self.grid, self.prune_tol)

    def initial_state(self) -> JointState:
        return JointState.from_product(self.basis, self.psi1, self.psi2)

    def flat_endpoint(self, endpoint: tuple[int, int]) -> int:
        return self.basis.flat_a(*endpoint)

    def density_scale(self) -> float:
        return 1.0 if self.grid is None else 1.0 / self.grid.dx

    def current_scale(self) -> float:
        if self.grid is None:
            return 1.0
        return (self.grid.dx / self.grid.dt) / self.grid.dx


def direct_state(context: PathContext, n: int | None = None) -> JointState:
    """Reference joint state after n layers, evolved without path machinery."""
    n = context.n_layers if n is None else int(n)
    state = context.initial_state()
    from .circuit import apply_layer

    for layer in context.layers[:n]:
        state = apply_layer(state, layer)
    return state


@dataclass
class LevelRecord:
    """Frontier snapshot at one layer of the enumeration."""

    endpoints: np.ndarray
    parents: np.ndarray
    amps: np.ndarray | None = None
    partner_states: np.ndarray | None = None


class PathEnsemble:
    """Exhaustive path decomposition after a fixed number of layers."""

    def __init__(
        self,
        context: PathContext,
        n_layers: int,
        levels: list[LevelRecord],
        amps: np.ndarray,
        partner_states: np.ndarray,
        keep_levels: bool,
    ):
        self.context = context
        self.n_layers = n_layers
        self.levels = levels
        self.endpoints = levels[-1].endpoints
        self.amps = amps
        self.partner_states = partner_states
        self.keep_levels = keep_levels
        self._groups: dict[int, np.ndarray] | None = None
        self._rows: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return int(self.endpoints.shape[0])

    def endpoint_counts(self) -> np.ndarray:
        return np.bincount(self.endpoints, minlength=self.context.basis.dim_a)

    @property
    def pair_count(self) -> int:
        counts = self.endpoint_counts().astype(np.int64)
        return int(np.sum(counts * counts))

    def group_indices(self) -> dict[int, np.ndarray]:
        """Path ids per flat endpoint, in enumeration order."""
        if self._groups is None:
            order = np.argsort(self.endpoints, kind="stable")
            sorted_eps = self.endpoints[order]
            bounds = np.searchsorted(sorted_eps, np.arange(self.context.basis.dim_a + 1))
            self._groups = {}
            for g in range(self.context.basis.dim_a):
                lo, hi = bounds[g], bounds[g + 1]
                if hi > lo:
                    self._groups[g] = order[lo:hi]
        return self._groups

    def steps_of(self, path_id: int) -> np.ndarray:
        """Flat endpoint sequence of one path, layer 0 through n."""
        seq = np.empty(self.n_layers + 1, dtype=np.int64)
        a = int(path_id)
        for r in range(self.n_layers, -1, -1):
            seq[r] = self.levels[r].endpoints[a]
            a = int(self.levels[r].parents[a])
        return seq

    def to_path(self, path_id: int) -> Path:
        basis = self.context.basis
        return Path(tuple(basis.unflat_a(int(z)) for z in self.steps_of(path_id)))

    def reconstruct_rows(self) -> np.ndarray:
        """Amplitude-weighted partner-state sums per endpoint.

        Row j equals the directly evolved joint state's row j; this is the
        module's defining identity and what every density reconstruction
        reduces to.
        """
        if self._rows is None:
            d1 = self.context.basis.dim_a
            d2 = self.context.basis.dim_b
            rows = np.zeros((d1, d2), dtype=np.complex128)
            for g, idx in self.group_indices().items():
                rows[g] = (self.amps[idx, None] * self.partner_states[idx]).sum(axis=0)
            self._rows = rows
        return self._rows

    def diagonal_weights(self) -> np.ndarray:
        """Per-endpoint sum of |amplitude|^2 times partner-state norm."""
        d1 = self.context.basis.dim_a
        out = np.zeros(d1)
        norms = np.einsum("pk,pk->p", self.partner_states.conj(), self.partner_states).real
        w = np.abs(self.amps) ** 2 * norms
        np.add.at(out, self.endpoints, w)
        return out


def _column_structure(u: np.ndarray, prune_tol: float):
    rows, vals = [], []
    for z in range(u.shape[1]):
        nz = np.flatnonzero(np.abs(u[:, z]) > prune_tol)
        rows.append(nz.astype(np.int32))
        vals.append(u[nz, z])
    return rows, vals


def enumerate_all(
    context: PathContext,
    n: int | None = None,
    caps: PathCaps | None = None,
    keep_levels: bool = False,
) -> PathEnsemble:
    """Breadth-first exhaustive enumeration of the first particle's paths.

    Level by level, every path is extended along all transitions with a
    nonzero one-body matrix element; the partner states are advanced by the
    shared one-body layer and then picked up the coupling phase column of
    the path's new point.  Deterministic: successors are emitted in
    ascending basis order for each parent.
    """
    n = context.n_layers if n is None else int(n)
    if not 0 <= n <= context.n_layers:
        raise ValidationError(f"layer count {n} outside 0..{context.n_layers}")
    caps = caps or PathCaps()
    d2 = context.basis.dim_b
    start = np.flatnonzero(np.abs(context.psi1) > context.prune_tol).astype(np.int32)
    levels = [
        LevelRecord(
            endpoints=start,
            parents=np.full(start.shape[0], -1, dtype=np.int32),
            amps=context.psi1[start].copy(),
            partner_states=np.repeat(context.psi2[None, :], start.shape[0], axis=0),
        )
    ]
    amps = levels[0].amps
    partner = levels[0].partner_states
    bytes_kept = partner.nbytes if keep_levels else 0

    for t in range(n):
        layer = context.layers[t]
        rows, vals = _column_structure(layer.u_a, context.prune_tol)
        counts = np.array([rows[z].shape[0] for z in levels[-1].endpoints], dtype=np.int64)
        total = int(counts.sum())
        # A path always has at least one successor, so the frontier never
        # shrinks and the final pair count is at least the frontier size.
        if total > caps.pair_cap:
            raise ResourceCapError(
                f"path count reached {total} at layer {t + 1}, beyond the pair cap "
                f"{caps.pair_cap}; raise the cap or shrink the scenario"
            )
        frontier_bytes = total * (16 * d2 + 16 + 8)
        if bytes_kept + frontier_bytes > caps.memory_cap_bytes:
            raise ResourceCapError(
                f"path storage would need {bytes_kept + frontier_bytes} bytes at layer "
                f"{t + 1}, beyond the memory cap {caps.memory_cap_bytes}"
            )
        parent_idx = np.repeat(np.arange(counts.shape[0], dtype=np.int64), counts)
        new_endpoints = (
            np.concatenate([rows[z] for z in levels[-1].endpoints])
            if total
            else np.empty(0, dtype=np.int32)
        )
        trans = (
            np.concatenate([vals[z] for z in levels[-1].endpoints])
            if total
            else np.empty(0, dtype=np.complex128)
        )
        new_amps = amps[parent_idx] * trans
        pushed = partner @ layer.u_b.T
        new_partner = pushed[parent_idx]
        factor = layer.coupling_factor()
        if factor is not None:
            new_partner = new_partner * factor[new_endpoints, :]
        rec = LevelRecord(endpoints=new_endpoints, parents=parent_idx.astype(np.int32))
        if keep_levels:
            rec.amps = new_amps
            rec.partner_states = new_partner
            bytes_kept += new_partner.nbytes
        levels.append(rec)
        amps = new_amps
        partner = new_partner

    levels[-1].amps = amps
    levels[-1].partner_states = partner
    ensemble = PathEnsemble(context, n, levels, amps, partner, keep_levels)
    if ensemble.pair_count > caps.pair_cap:
        raise ResourceCapError(
            f"endpoint pair count {ensemble.pair_count} exceeds the cap {caps.pair_cap}"
        )
    return ensemble


def enumerate_paths(
    context: PathContext,
    endpoint: tuple[int, int],
    n: int | None = None,
    caps: PathCaps | None = None,
    ensemble: PathEnsemble | None = None,
) -> PathBundle:
    """Materialized bundle of every nonzero path ending at one point."""
    if ensemble is None:
        ensemble = enumerate_all(context, n, caps)
    flat = context.flat_endpoint(endpoint)
    ids = ensemble.group_indices().get(flat, np.empty(0, dtype=np.int64))
    if ids.shape[0] > 100_000:
        raise ResourceCapError(
            f"{ids.shape[0]} paths at one endpoint is beyond the materialization limit"
        )
    return PathBundle(
        endpoint=endpoint,
        layer=ensemble.n_layers,
        paths=[ensemble.to_path(int(i)) for i in ids],
        amplitudes=ensemble.amps[ids].copy(),
        path_ids=ids.copy(),
    )


def _validate_path(context: PathContext, path: Path) -> list[int]:
    if len(path) == 0 or len(path) > context.n_layers + 1:
        raise ValidationError("path length does not fit the layer stack")
    flat = []
    for loc, spin in path.steps:
        flat.append(context.basis.flat_a(int(loc), int(spin)))
    return flat


def conditional_unitary(context: PathContext, path: Path) -> ConditionalUnitary:
    """Partner-particle operator given the first particle walks this path.

    Per layer: the shared one-body layer first, then the diagonal phase
    column picked out by the path's post-transition point.  Independent of
    the path wherever the couplings vanish.
    """
    flat = _validate_path(context, path)
    d2 = context.basis.dim_b
    mat = np.eye(d2, dtype=np.complex128)
    for r in range(1, len(flat)):
        layer = context.layers[r - 1]
        mat = layer.u_b @ mat
        factor = layer.coupling_factor()
        if factor is not None:
            mat = factor[flat[r], :][:, None] * mat
    defect = np.max(np.abs(mat.conj().T @ mat - np.eye(d2)))
    if defect > 1e-12:
        raise PilotPathError(f"conditional operator lost unitarity by {defect:.3e}")
    return ConditionalUnitary(matrix=mat, path=path)


def pair_overlap(context: PathContext, path_p: Path, path_q: Path):
    """Overlap of the two paths' partner states, with per-layer increments.

    Returns (overlap, increments) where increments[r-1] is the change of the
    truncated overlap from layer r-1 to r; one plus their sum telescopes
    back to the full overlap.
    """
    flat_p = _validate_path(context, path_p)
    flat_q = _validate_path(context, path_q)
    if len(flat_p) != len(flat_q):
        raise ValidationError("paths must share the same layer count")
    vp = context.psi2.copy()
    vq = context.psi2.copy()
    partial = [np.vdot(vp, vq)]
    for r in range(1, len(flat_p)):
        layer = context.layers[r - 1]
        vp = layer.u_b @ vp
        vq = layer.u_b @ vq
        factor = layer.coupling_factor()
        if factor is not None:
            vp = vp * factor[flat_p[r], :]
            vq = vq * factor[flat_q[r], :]
        partial.append(np.vdot(vp, vq))
    partial = np.array(partial)
    return partial[-1], np.diff(partial)


# ----------------------------------------------------------------------------
# Overlap tables


@dataclass
class OverlapGroup:
    """Pairwise partner-state overlaps among the paths of one endpoint."""

    endpoint: tuple[int, int]
    path_ids: np.ndarray
    overlaps: np.ndarray
    increments: np.ndarray | None = None


@dataclass
class OverlapTable:
    """Per-endpoint overlap structure of a path ensemble."""

    groups: dict[int, OverlapGroup]
    n_layers: int

    def group(self, endpoint: tuple[int, int], basis: ModeSpinBasis) -> OverlapGroup:
        return self.groups[basis.flat_a(*endpoint)]


def _settle_gram(gram: np.ndarray, what: str) -> np.ndarray:
    """Validate the structural identities of an overlap Gram, then pin them.

    The diagonal must already be one and the matrix conjugate-symmetric up
    to accumulation noise; deviations beyond tolerance indicate an engine
    defect, not data to be smoothed over.
    """
    asym = np.max(np.abs(gram - gram.conj().T)) if gram.size else 0.0
    if asym > OVERLAP_HERM_TOL:
        raise PilotPathError(f"{what}: conjugate symmetry off by {asym:.3e}")
    gram = 0.5 * (gram + gram.conj().T)
    if gram.size:
        diag_off = np.max(np.abs(np.diagonal(gram) - 1.0))
        if diag_off > OVERLAP_DIAG_TOL:
            raise PilotPathError(f"{what}: unit diagonal off by {diag_off:.3e}")
        np.fill_diagonal(gram, 1.0)
        top = np.max(np.abs(gram))
        if top > 1.0 + 1e-12:
            raise PilotPathError(f"{what}: overlap magnitude {top} exceeds one")
    return gram


def _ancestor_matrix(ensemble: PathEnsemble, ids: np.ndarray) -> np.ndarray:
    anc = np.empty((ensemble.n_layers + 1, ids.shape[0]), dtype=np.int64)
    a = ids.astype(np.int64)
    for r in range(ensemble.n_layers, -1, -1):
        anc[r] = a
        a = ensemble.levels[r].parents[a]
    return anc


def overlap_table(
    ensemble: PathEnsemble,
    endpoint: tuple[int, int] | None = None,
    with_increments: bool = False,
) -> OverlapTable:
    """Gram matrices of partner states, grouped by path endpoint.

    with_increments also returns the per-layer changes of the truncated
    overlaps (needs an ensemble enumerated with keep_levels=True) and
    checks that one plus their sum telescopes to the final overlap.
    """
    if with_increments and not ensemble.keep_levels:
        raise ValidationError("increments need an ensemble enumerated with keep_levels=True")
    basis = ensemble.context.basis
    groups = ensemble.group_indices()
    wanted = groups.keys() if endpoint is None else [basis.flat_a(*endpoint)]
    out: dict[int, OverlapGroup] = {}
    for g in wanted:
        if g not in groups:
            continue
        ids = groups[g]
        phi = ensemble.partner_states[ids]
        raw = phi.conj() @ phi.T
        increments = None
        if with_increments:
            anc = _ancestor_matrix(ensemble, ids)
            increments = np.empty((ensemble.n_layers, ids.shape[0], ids.shape[0]), dtype=np.complex128)
            prev = None
            for r in range(ensemble.n_layers + 1):
                phi_r = ensemble.levels[r].partner_states[anc[r]]
                gram_r = phi_r.conj() @ phi_r.T
                if r > 0:
                    increments[r - 1] = gram_r - prev
                prev = gram_r
            resid = np.max(np.abs(1.0 + increments.sum(axis=0) - raw))
            if resid > 1e-12:
                raise PilotPathError(f"overlap increments fail to telescope by {resid:.3e}")
        gram = _settle_gram(raw, f"endpoint {basis.unflat_a(g)}")
        out[g] = OverlapGroup(
            endpoint=basis.unflat_a(g), path_ids=ids.copy(), overlaps=gram, increments=increments
        )
    return OverlapTable(groups=out, n_layers=ensemble.n_layers)


# ----------------------------------------------------------------------------
# Reconstruction sums


@dataclass
class PathDensity:
    """Endpoint density split into its path-diagonal and cross parts."""

    total: np.ndarray | float
    diagonal: np.ndarray | float
    cross: np.ndarray | float


@dataclass
class PathCurrent:
    """Reconstructed spatial current with its vanishing diagonal made explicit."""

    value: np.ndarray | float
    diagonal_term: np.ndarray | float
    imag_residue: float


def path_sum_marginal(ensemble: PathEnsemble) -> np.ndarray:
    """Mode occupation probabilities rebuilt from the decomposition."""
    basis = ensemble.context.basis
    rows = ensemble.reconstruct_rows().reshape(basis.modes_a, basis.spins_a, basis.dim_b)
    return np.einsum("jsk,jsk->j", rows.conj(), rows).real


def path_sum_density(ensemble: PathEnsemble, location: int | None = None) -> PathDensity:
    """Endpoint density as diagonal-plus-cross path sums.

    The diagonal part sums |amplitude|^2 and is nonnegative by construction;
    the cross part carries all interference, weighted by partner-state
    overlaps.  In lattice mode values are per unit length.
    """
    basis = ensemble.context.basis
    scale = ensemble.context.density_scale()
    rows = ensemble.reconstruct_rows().reshape(basis.modes_a, basis.spins_a, basis.dim_b)
    total = np.einsum("jsk,jsk->j", rows.conj(), rows).real * scale
    diag = ensemble.diagonal_weights().reshape(basis.modes_a, basis.spins_a).sum(axis=1) * scale
    cross = total - diag
    if location is None:
        return PathDensity(total=total, diagonal=diag, cross=cross)
    return PathDensity(
        total=float(total[location]), diagonal=float(diag[location]), cross=float(cross[location])
    )


def path_sum_current(ensemble: PathEnsemble, location: int | None = None) -> PathCurrent:
    """Spatial current rebuilt from cross-endpoint path pairs.

    The velocity matrix has a vanishing diagonal, so same-spin pairs drop
    out and the result is a pure cross term; the diagonal contribution is
    still evaluated explicitly and returned (it is exactly zero).
    """
    context = ensemble.context
    if context.basis.spins_a != SPINOR_DIM or context.grid is None:
        raise ValidationError("current reconstruction needs lattice mode with 4-spinors")
    basis = context.basis
    scale = context.current_scale()
    rows = ensemble.reconstruct_rows().reshape(basis.modes_a, SPINOR_DIM, basis.dim_b)
    cur = np.einsum("xak,ac,xck->x", rows.conj(), ALPHA1, rows) * scale
    resid = float(np.max(np.abs(cur.imag))) if cur.size else 0.0
    if resid > 1e-12:
        raise PilotPathError(f"current reconstruction left imaginary residue {resid:.3e}")
    weights = ensemble.diagonal_weights().reshape(basis.modes_a, SPINOR_DIM)
    diag_term = weights @ np.diagonal(ALPHA1).real * scale
    value = cur.real
    if location is None:
        return PathCurrent(value=value, diagonal_term=diag_term, imag_residue=resid)
    return PathCurrent(
        value=float(value[location]),
        diagonal_term=float(diag_term[location]),
        imag_residue=resid,
    )


# ----------------------------------------------------------------------------
# Wavepacket-mode conditioning


@dataclass(frozen=True)
class ModeDictionary:
    """Orthonormal spatial wavepacket profiles used as coarse path labels."""

    profiles: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.profiles, dtype=np.complex128)
        if w.ndim != 2 or w.shape[1] < 1:
            raise ValidationError("profiles must be a (n_sites, n_modes) array")
        defect = np.max(np.abs(w.conj().T @ w - np.eye(w.shape[1])))
        if defect > 1e-10:
            raise ValidationError(f"profiles are not orthonormal (defect {defect:.3e})")
        object.__setattr__(self, "profiles", w)
        w.flags.writeable = False

    @property
    def n_modes(self) -> int:
        return self.profiles.shape[1]

    @classmethod
    def position_basis(cls, n_sites: int) -> "ModeDictionary":
        return cls(np.eye(n_sites, dtype=np.complex128))

    @classmethod
    def from_profiles(cls, profiles: list[np.ndarray]) -> "ModeDictionary":
        return cls(np.stack([np.asarray(p, dtype=np.complex128) for p in profiles], axis=1))


@dataclass
class ModeProjection:
    """Density and current rebuilt from wavepacket-mode paths."""

    j0: np.ndarray
    j1: np.ndarray
    captured_norm: float
    complete: bool
    n_modes: int


def mode_projected_sum(
    context: PathContext,
    dictionary: ModeDictionary,
    n: int | None = None,
    caps: PathCaps | None = None,
) -> ModeProjection:
    """Path sums with wavepacket labels instead of site labels.

    The layers and the initial factor are compressed onto the dictionary
    span (mode index times spinor index); couplings must act diagonally on
    that span, i.e. each coupling phase must be constant over every
    profile's support.  If the initial factor leaks outside the span the
    captured-norm fraction is reported and a warning is issued; the sums
    then cover the captured component only.
    """
    if context.grid is None or context.basis.spins_a != SPINOR_DIM:
        raise ValidationError("mode projection needs lattice mode with 4-spinors")
    w = dictionary.profiles
    n_sites = context.basis.modes_a
    if w.shape[0] != n_sites:
        raise ValidationError("profiles do not match the lattice size")
    m = dictionary.n_modes
    wide = np.kron(w, np.eye(SPINOR_DIM, dtype=np.complex128))

    psi1_proj = wide.conj().T @ context.psi1
    captured = float(np.vdot(psi1_proj, psi1_proj).real)
    complete = captured >= 1.0 - 1e-10
    if captured < 1e-12:
        raise DegenerateDensityError("mode dictionary captures none of the initial norm")
    if not complete:
        warnings.warn(
            f"mode dictionary captures only {captured:.6f} of the initial norm",
            stacklevel=2,
        )

    proj_layers = []
    for t, layer in enumerate(context.layers[: context.n_layers if n is None else n]):
        u_proj = wide.conj().T @ layer.u_a @ wide
        defect = np.max(np.abs(u_proj.conj().T @ u_proj - np.eye(m * SPINOR_DIM)))
        if defect > 1e-10:
            raise ValidationError(
                f"layer {t}: dictionary span is not closed under the dynamics "
                f"(unitarity defect {defect:.3e})"
            )
        phases_proj = None
        if layer.phases is not None:
            c = np.exp(1j * layer.phases)
            proj = np.einsum("ap,ak,aq->pqk", wide.conj(), c, wide)
            diag = np.einsum("ppk->pk", proj)
            embed = np.einsum("pk,pq->pqk", diag, np.eye(m * SPINOR_DIM))
            off_mass = float(np.max(np.abs(proj - embed)))
            mod_off = float(np.max(np.abs(np.abs(diag) - 1.0)))
            if off_mass > 1e-12 or mod_off > 1e-12:
                raise ValidationError(
                    f"layer {t}: couplings are not diagonal over the dictionary "
                    f"(off-diagonal {off_mass:.3e}, modulus defect {mod_off:.3e})"
                )
            phases_proj = np.angle(diag)
        proj_layers.append(CircuitLayer(u_proj, layer.u_b, phases_proj))

    sub_basis = ModeSpinBasis(m, SPINOR_DIM, context.basis.modes_b, context.basis.spins_b)
    nrm = np.sqrt(captured)
    sub_context = PathContext(
        proj_layers, sub_basis, psi1_proj / nrm, context.psi2, grid=None, prune_tol=context.prune_tol
    )
    sub = enumerate_all(sub_context, n=len(proj_layers), caps=caps)
    rows = sub.reconstruct_rows().reshape(m, SPINOR_DIM, context.basis.dim_b) * nrm
    spatial = np.einsum("xq,qak->xak", w, rows)
    scale_d = context.density_scale()
    scale_j = context.current_scale()
    j0 = np.einsum("xak,xak->x", spatial.conj(), spatial).real * scale_d
    j1c = np.einsum("xak,ac,xck->x", spatial.conj(), ALPHA1, spatial) * scale_j
    resid = float(np.max(np.abs(j1c.imag)))
    if resid > 1e-12:
        raise PilotPathError(f"mode-projected current left imaginary residue {resid:.3e}")
    return ModeProjection(
        j0=j0, j1=j1c.real, captured_norm=captured, complete=complete, n_modes=m
    )
