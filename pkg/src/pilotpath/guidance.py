"""Velocity-field kinematics for single-particle subsystems.

The marginal density/current pair of one particle defines a velocity field
v = j1/j0 on the lattice.  This module builds per-layer field stacks from
walk histories, transports positions through them in either time direction
with a fixed-substep 4th-order integrator (see kernels), samples initial
ensembles from densities by inverse-CDF, and measures how well transported
ensembles track the evolving density (one-sample KS distance).

Wavefunction nodes make the velocity singular; sites whose density falls
below a threshold are masked, and any trajectory touching a masked
interpolation corner freezes at its current position and is flagged.  The
policy is deliberate: silent extrapolation across nodes would corrupt the
ensemble statistics that the whole module exists to check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dirac import CurrentField, LatticeGrid, WalkHistory
from .errors import DegenerateDensityError, ValidationError

NODE_EPS_REL = 1e-9


@dataclass(frozen=True)
class VelocityField:
    """Guidance velocities at one layer, with node-masked sites."""

    values: np.ndarray
    node_mask: np.ndarray
    eps_node: float
    layer: int = 0

    def __post_init__(self) -> None:
        if self.values.shape != self.node_mask.shape or self.values.ndim != 1:
            raise ValidationError("values and node_mask must be matching 1D tables")
        if not np.all(np.isfinite(self.values[~self.node_mask])):
            raise ValidationError("velocity must be finite outside masked nodes")


def velocity_field(current: CurrentField, eps_node: float | None = None) -> VelocityField:
    """Pointwise j1/j0 with sites below the node threshold masked.

    eps_node is an absolute density threshold; by default it is 1e-9 of the
    field's peak density.
    """
    j0 = current.j0
    if eps_node is None:
        eps_node = NODE_EPS_REL * float(np.max(j0))
    mask = j0 < eps_node
    if np.all(mask):
        raise DegenerateDensityError("every site is below the node threshold")
    values = np.zeros_like(j0)
    np.divide(current.j1, j0, out=values, where=~mask)
    return VelocityField(values=values, node_mask=mask, eps_node=float(eps_node), layer=current.layer)


@dataclass(frozen=True)
class VelocityStack:
    """Per-layer velocity tables for one particle over a full run."""

    values: np.ndarray
    masks: np.ndarray
    grid: LatticeGrid
    particle: int
    eps_node: float

    def __post_init__(self) -> None:
        if self.values.shape != self.masks.shape or self.values.ndim != 2:
            raise ValidationError("stack tables must be matching (layers+1, sites) arrays")
        if self.values.shape[1] != self.grid.n_sites:
            raise ValidationError("stack width must match the grid")

    @property
    def n_layers(self) -> int:
        return self.values.shape[0] - 1

    def scaled(self, factor: float) -> "VelocityStack":
        """Same masks, velocities multiplied; used as a falsification control."""
        return VelocityStack(
            values=self.values * factor,
            masks=self.masks,
            grid=self.grid,
            particle=self.particle,
            eps_node=self.eps_node,
        )

    @classmethod
    def from_tables(
        cls,
        density: np.ndarray,
        current: np.ndarray,
        grid: LatticeGrid,
        particle: int = 1,
        eps_rel: float = NODE_EPS_REL,
    ) -> "VelocityStack":
        density = np.asarray(density, dtype=np.float64)
        current = np.asarray(current, dtype=np.float64)
        if density.shape != current.shape or density.ndim != 2:
            raise ValidationError("density and current stacks must be matching 2D arrays")
        eps_abs = eps_rel * float(np.max(density))
        masks = density < eps_abs
        if np.any(np.all(masks, axis=1)):
            raise DegenerateDensityError("a layer has every site below the node threshold")
        values = np.zeros_like(density)
        np.divide(current, density, out=values, where=~masks)
        return cls(values=values, masks=masks, grid=grid, particle=particle, eps_node=eps_abs)


def velocity_stack(
    history: WalkHistory, particle: int = 1, eps_rel: float = NODE_EPS_REL
) -> VelocityStack:
    """Field stack of one particle's marginal flow over a recorded run."""
    if particle == 1:
        return VelocityStack.from_tables(history.density1, history.current1, history.grid, 1, eps_rel)
    if particle == 2:
        return VelocityStack.from_tables(history.density2, history.current2, history.grid, 2, eps_rel)
    raise ValidationError("particle must be 1 or 2")


@dataclass
class Trajectory:
    """One transported position history, recorded at every substep."""

    positions: np.ndarray
    times: np.ndarray
    direction: str
    particle: int
    frozen_step: int

    @property
    def flagged(self) -> bool:
        return self.frozen_step >= 0


@dataclass
class EnsembleRun:
    """A batch of trajectories transported through one field stack."""

    positions: np.ndarray
    frozen: np.ndarray
    times: np.ndarray
    direction: str
    particle: int
    substeps: int
    seed: int | None = None

    @property
    def n_trajectories(self) -> int:
        return self.positions.shape[0]

    @property
    def n_flagged(self) -> int:
        return int(np.sum(self.frozen >= 0))

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            positions=self.positions[i].copy(),
            times=self.times.copy(),
            direction=self.direction,
            particle=self.particle,
            frozen_step=int(self.frozen[i]),
        )

    def layer_positions(self, layer: int, n_layers: int) -> np.ndarray:
        """Positions of all trajectories when the run passes the given layer."""
        if self.direction == "forward":
            rec = layer * self.substeps
        else:
            rec = (n_layers - layer) * self.substeps
        return self.positions[:, rec]


def _check_direction(direction: str) -> bool:
    if direction not in ("forward", "backward"):
        raise ValidationError("direction must be 'forward' or 'backward'")
    return direction == "forward"


def integrate_batch(
    stack: VelocityStack,
    x0: np.ndarray,
    direction: str = "forward",
    substeps: int = 4,
    seed: int | None = None,
) -> EnsembleRun:
    """Transport a batch of positions through the whole stack.

    Backward runs start at the last layer and walk the same fields with a
    negated time increment.  Deterministic; bit-equal across backends.
    """
    forward = _check_direction(direction)
    if substeps < 1:
        raise ValidationError("substeps must be at least 1")
    grid = stack.grid
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.all(np.isfinite(x0)):
        raise ValidationError("start positions must be finite")
    if grid.boundary == "periodic":
        # Ring positions are classes mod extent; canonicalize so cell-based
        # samples from the wrap cell (half a cell below x_min) are accepted.
        x0 = grid.x_min + np.mod(x0 - grid.x_min, grid.extent)
    else:
        lo = grid.x_min - 0.5 * grid.dx
        hi = grid.x_min + grid.extent - 0.5 * grid.dx
        if np.any(x0 < lo) or np.any(x0 > hi):
            raise ValidationError("start positions outside the lattice extent")
        x0 = np.clip(x0, grid.x_min, grid.x_min + (grid.n_sites - 1) * grid.dx)
    positions, frozen = kernels.transport(
        stack.values,
        stack.masks,
        x0,
        grid.x_min,
        grid.dx,
        grid.extent,
        grid.boundary == "periodic",
        grid.dt,
        substeps,
        forward,
    )
    n_rec = positions.shape[1]
    step = grid.dt / substeps
    if forward:
        times = step * np.arange(n_rec)
    else:
        times = stack.n_layers * grid.dt - step * np.arange(n_rec)
    return EnsembleRun(
        positions=positions,
        frozen=frozen,
        times=times,
        direction=direction,
        particle=stack.particle,
        substeps=substeps,
        seed=seed,
    )


def integrate(
    stack: VelocityStack, x0: float, direction: str = "forward", substeps: int = 4
) -> Trajectory:
    """Transport a single position; rejects starts inside masked regions."""
    run = integrate_batch(stack, np.array([float(x0)]), direction, substeps)
    if run.frozen[0] == 0:
        raise ValidationError("start position sits in a node-masked region")
    return run.trajectory(0)


# ----------------------------------------------------------------------------
# Sampling and distribution comparison
#
# Cell convention shared by sampling and KS: site i owns the cell
# [x_i - dx/2, x_i + dx/2); the CDF is linear within each cell.  Positions on
# periodic grids are wrapped into the cell window before comparison.


def cell_edges(grid: LatticeGrid) -> np.ndarray:
    return grid.x_min - 0.5 * grid.dx + grid.dx * np.arange(grid.n_sites + 1)


def _cell_masses(density: np.ndarray, grid: LatticeGrid) -> np.ndarray:
    masses = np.asarray(density, dtype=np.float64) * grid.dx
    if np.min(masses) < -1e-12:
        raise ValidationError("density must be nonnegative")
    masses = np.maximum(masses, 0.0)
    total = masses.sum()
    if total < 1e-12:
        raise DegenerateDensityError("density has no mass to sample")
    return masses / total

def sample_density(
    density: np.ndarray, grid: LatticeGrid, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Inverse-CDF draw of positions; uniform within each site's cell.

    Draw order (fixed for reproducibility): one uniform batch to pick cells,
    one to place positions inside them.
    """
    masses = _cell_masses(density, grid)
    cdf = np.cumsum(masses)
    cdf[-1] = 1.0
    idx = np.searchsorted(cdf, rng.random(count), side="right")
    idx = np.minimum(idx, grid.n_sites - 1)
    offset = rng.random(count)
    return cell_edges(grid)[idx] + offset * grid.dx


def sample_joint_density(
    joint: np.ndarray, grid: LatticeGrid, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw configuration pairs from a two-particle density table.

    First particle's cell from the row-summed marginal, second from the
    conditional row, then uniform placement within both cells.  Draw order:
    cells of particle 1, cells of particle 2, then the two placement batches.
    """
    joint = np.asarray(joint, dtype=np.float64)
    n = grid.n_sites
    if joint.shape != (n, n):
        raise ValidationError("joint density table must be (n_sites, n_sites)")
    if np.min(joint) < -1e-12:
        raise ValidationError("joint density must be nonnegative")
    joint = np.maximum(joint, 0.0)
    row_mass = joint.sum(axis=1)
    total = row_mass.sum()
    if total < 1e-12:
        raise DegenerateDensityError("joint density has no mass to sample")
    cdf1 = np.cumsum(row_mass / total)
    cdf1[-1] = 1.0
    i1 = np.searchsorted(cdf1, rng.random(count), side="right")
    i1 = np.minimum(i1, n - 1)
    cond = np.cumsum(joint, axis=1)
    # Guard all-zero rows; they are never drawn because their marginal mass is 0.
    row_tot = np.where(cond[:, -1] > 0.0, cond[:, -1], 1.0)
    cond = cond / row_tot[:, None]
    cond[:, -1] = 1.0
    u2 = rng.random(count)
    rows = cond[i1]
    i2 = (rows < u2[:, None]).sum(axis=1)
    i2 = np.minimum(i2, n - 1)
    edges = cell_edges(grid)
    x1 = edges[i1] + rng.random(count) * grid.dx
    x2 = edges[i2] + rng.random(count) * grid.dx
    return x1, x2


def ks_statistic(samples: np.ndarray, density: np.ndarray, grid: LatticeGrid) -> float:
    """One-sample KS distance between positions and a lattice density.

    The model CDF is piecewise linear over the site cells, matching the
    sampling convention above.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValidationError("need at least one sample")
    masses = _cell_masses(density, grid)
    edges = cell_edges(grid)
    cdf = np.concatenate([[0.0], np.cumsum(masses)])
    cdf[-1] = 1.0
    if grid.boundary == "periodic":
        span = grid.extent
        samples = edges[0] + ((samples - edges[0]) % span)
    s = np.sort(samples)
    f = np.interp(s, edges, cdf)
    n = s.shape[0]
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(max(d_plus, d_minus))


def equivariance_test(
    run: EnsembleRun, density_stack: np.ndarray, grid: LatticeGrid, layers=None
) -> np.ndarray:
    """KS distance between the ensemble and the density at each layer.

    The ensemble should have been sampled from the density at its starting
    layer; transported positions are compared to the stack row by row.
    """
    density_stack = np.asarray(density_stack, dtype=np.float64)
    n_layers = density_stack.shape[0] - 1
    layer_list = list(range(n_layers + 1)) if layers is None else list(layers)
    out = np.empty(len(layer_list))
    for k, layer in enumerate(layer_list):
        pos = run.layer_positions(layer, n_layers)
        out[k] = ks_statistic(pos, density_stack[layer], grid)
    return out
