"""End-boundary transport protocols and branch-structure analysis.

Three procedures built on the engine and guidance layers:

- retro_run: draw configurations from the final-layer joint density, then
  transport each particle backward to layer 0 under its own marginal
  velocity field.  The claim under test is statistical: at every layer the
  backward ensemble must match that layer's marginal density.

- superdet_replay: take the backward trajectories' layer-0 endpoints as
  initial conditions and run the same fields forward.  Because the
  integrator is deterministic and near-reversible, each replay must retrace
  its backward path; the maximum deviation is the reported figure of merit.

- build_tracks / detect_crossings: extract connected support components of
  the joint density ("joint" track) and of each marginal density
  ("marginal" track) per layer, link them across layers by overlap into a
  branch graph, and classify trajectory transitions between the projections
  of joint components.  A trajectory changing to a component that is not a
  graph descendant/ancestor of its previous one has crossed between worlds;
  such changes can only happen where two projections overlap on the
  particle's axis.

RNG policy: one scenario seed, expanded into independent counter-mode
streams (stream index in the Philox counter): stream 0 draws final-layer
configurations, stream 1 draws forward-guidance ensembles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .dirac import LatticeGrid, WalkHistory
from .errors import DegenerateDensityError, ValidationError
from .guidance import (
    EnsembleRun,
    VelocityStack,
    equivariance_test,
    integrate_batch,
    sample_joint_density,
    velocity_stack,
)

STREAM_FINAL_SAMPLE = 0
STREAM_FORWARD_SAMPLE = 1

TRACK_THRESHOLD_REL = 1e-4


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent, reproducible substream of one scenario seed."""
    return np.random.Generator(
        np.random.Philox(key=[int(seed), 0], counter=[0, 0, int(stream), 0])
    )


@dataclass(frozen=True)
class Configuration:
    """Definite positions of both particles at one layer."""

    positions: tuple[float, float]
    layer: int


# ----------------------------------------------------------------------------
# Retrocausal run and superdeterministic replay


@dataclass
class RetroResult:
    """Backward ensembles anchored at the final layer."""

    seed: int
    substeps: int
    final_x1: np.ndarray
    final_x2: np.ndarray
    runs: dict[int, EnsembleRun]
    ks: dict[int, np.ndarray]
    stacks: dict[int, VelocityStack]
    n_layers: int

    def configuration(self, i: int) -> Configuration:
        return Configuration(
            positions=(float(self.final_x1[i]), float(self.final_x2[i])), layer=self.n_layers
        )

    def initial_positions(self, particle: int) -> np.ndarray:
        """Layer-0 endpoints of the backward trajectories."""
        return self.runs[particle].positions[:, -1]


def retro_run(
    history: WalkHistory, seed: int, count: int = 10_000, substeps: int = 4
) -> RetroResult:
    """Sample the final joint density, transport each particle backward.

    Each particle follows the velocity field of its own marginal flow; the
    joint correlations enter only through the final-layer draw.  Per-layer
    KS distances against the recorded marginal stacks are returned.
    """
    if history.joint is None:
        raise ValidationError("retro run needs a history recorded with record_joint=True")
    grid = history.grid
    rng = stream_rng(seed, STREAM_FINAL_SAMPLE)
    x1, x2 = sample_joint_density(history.joint[-1], grid, count, rng)
    stacks = {1: velocity_stack(history, 1), 2: velocity_stack(history, 2)}
    runs = {}
    ks = {}
    for particle, x0 in ((1, x1), (2, x2)):
        run = integrate_batch(stacks[particle], x0, "backward", substeps, seed=seed)
        density = history.density1 if particle == 1 else history.density2
        runs[particle] = run
        ks[particle] = equivariance_test(run, density, grid)
    return RetroResult(
        seed=seed,
        substeps=substeps,
        final_x1=x1,
        final_x2=x2,
        runs=runs,
        ks=ks,
        stacks=stacks,
        n_layers=history.n_layers,
    )


@dataclass
class ReplayResult:
    """Forward replays compared against their backward sources."""

    max_deviation: float
    deviations: dict[int, np.ndarray]
    excluded: dict[int, int]
    runs: dict[int, EnsembleRun]

    @property
    def total_excluded(self) -> int:
        return sum(self.excluded.values())


def _periodic_gap(a: np.ndarray, b: np.ndarray, extent: float, periodic: bool) -> np.ndarray:
    d = np.abs(a - b)
    if periodic:
        d = np.minimum(d, extent - d)
    return d


def superdet_replay(retro: RetroResult) -> ReplayResult:
    """Run the backward endpoints forward and measure path deviation.

    Trajectories flagged on a node in either direction are excluded from
    the deviation statistic; their count is reported instead.
    """
    deviations = {}
    excluded = {}
    runs = {}
    top = 0.0
    for particle, back in retro.runs.items():
        stack = retro.stacks[particle]
        grid = stack.grid
        fwd = integrate_batch(
            stack, back.positions[:, -1].copy(), "forward", retro.substeps, seed=retro.seed
        )
        runs[particle] = fwd
        # Backward record k sits at the same time as forward record n_rec-1-k.
        gaps = _periodic_gap(
            fwd.positions,
            back.positions[:, ::-1],
            grid.extent,
            grid.boundary == "periodic",
        )
        ok = (back.frozen < 0) & (fwd.frozen < 0)
        excluded[particle] = int(np.sum(~ok))
        dev = np.where(ok, gaps.max(axis=1), np.nan)
        deviations[particle] = dev
        if np.any(ok):
            top = max(top, float(np.nanmax(dev)))
    return ReplayResult(max_deviation=top, deviations=deviations, excluded=excluded, runs=runs)


# ----------------------------------------------------------------------------
# Branch tracks


class _UnionFind:
    def __init__(self):
        self.parent: dict = {}

    def find(self, x):
        p = self.parent.setdefault(x, x)
        while p != self.parent[p]:
            self.parent[p] = self.parent[self.parent[p]]
            p = self.parent[p]
        self.parent[x] = p
        return p

    def union(self, a, b) -> bool:
        """Returns True if a and b were already connected."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return True
        self.parent[rb] = ra
        return False


def _label_with_wrap(mask: np.ndarray, periodic: bool) -> tuple[np.ndarray, int]:
    """Connected components of a support mask, merged across periodic seams."""
    labels, n = ndimage.label(mask)
    if not periodic or n < 2:
        return labels, int(labels.max())
    uf = _UnionFind()
    for c in range(1, n + 1):
        uf.find(c)
    seams = []
    if mask.ndim == 1:
        seams.append((labels[0], labels[-1]))
    else:
        seams.extend(zip(labels[0, :], labels[-1, :]))
        seams.extend(zip(labels[:, 0], labels[:, -1]))
    for a, b in seams:
        if a > 0 and b > 0:
            uf.union(int(a), int(b))
    roots = sorted({uf.find(c) for c in range(1, n + 1)})
    remap = np.zeros(n + 1, dtype=np.int64)
    for new, root in enumerate(roots, start=1):
        for c in range(1, n + 1):
            if uf.find(c) == root:
                remap[c] = new
    return remap[labels], len(roots)


@dataclass
class TrackGraph:
    """Layered branch graph of one density history.

    Nodes are (layer, component-label) pairs; edges link components in
    consecutive layers whose supports overlap.  An edge is a loop edge when
    its two nodes were already connected through earlier layers, i.e. the
    branch structure reconverges.
    """

    name: str
    threshold_rel: float
    labels: list[np.ndarray]
    n_components: list[int]
    edges: list[tuple[tuple[int, int], tuple[int, int]]]
    loop_edges: list[tuple[tuple[int, int], tuple[int, int]]] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.labels) - 1

    def successors(self, layer: int, comp: int) -> set[int]:
        return {b for (t, a), (_, b) in self.edges if t == layer and a == comp}

    def label_at(self, layer: int, idx) -> np.ndarray:
        return self.labels[layer][idx]


@dataclass
class TrackSet:
    """Joint-support and marginal-support branch graphs of one run."""

    joint: TrackGraph
    marginal: dict[int, TrackGraph]
    threshold_rel: float


def _build_graph(
    stacks: np.ndarray, name: str, threshold_rel: float, periodic: bool
) -> TrackGraph:
    if not 0.0 < threshold_rel < 1.0:
        raise ValidationError("track threshold must lie strictly between 0 and 1")
    labels = []
    counts = []
    for t in range(stacks.shape[0]):
        table = stacks[t]
        peak = float(table.max())
        if peak <= 0.0:
            raise DegenerateDensityError(f"{name}: layer {t} density has no support")
        lab, n = _label_with_wrap(table > threshold_rel * peak, periodic)
        if n == 0:
            raise DegenerateDensityError(f"{name}: threshold leaves no components at layer {t}")
        labels.append(lab)
        counts.append(n)
    edges = []
    loop_edges = []
    uf = _UnionFind()
    for t in range(len(labels) - 1):
        a, b = labels[t], labels[t + 1]
        both = (a > 0) & (b > 0)
        pairs = np.unique(np.stack([a[both], b[both]], axis=1), axis=0) if np.any(both) else []
        for pa, pb in pairs:
            edge = ((t, int(pa)), (t + 1, int(pb)))
            edges.append(edge)
            if uf.union(edge[0], edge[1]):
                loop_edges.append(edge)
    return TrackGraph(
        name=name,
        threshold_rel=threshold_rel,
        labels=labels,
        n_components=counts,
        edges=edges,
        loop_edges=loop_edges,
    )


def build_tracks(history: WalkHistory, threshold_rel: float = TRACK_THRESHOLD_REL) -> TrackSet:
    """Branch graphs of the joint density and of both marginal densities.

    Components are supports above threshold_rel times the layer's peak,
    linked across layers by overlap.  Joint components live in the two-
    particle configuration square; marginal components on each particle's
    axis.
    """
    if history.joint is None:
        raise ValidationError("track analysis needs a history recorded with record_joint=True")
    periodic = history.grid.boundary == "periodic"
    joint = _build_graph(history.joint, "joint", threshold_rel, periodic)
    marginal = {
        1: _build_graph(history.density1, "marginal-1", threshold_rel, periodic),
        2: _build_graph(history.density2, "marginal-2", threshold_rel, periodic),
    }
    return TrackSet(joint=joint, marginal=marginal, threshold_rel=threshold_rel)


# ----------------------------------------------------------------------------
# World membership and crossing detection


@dataclass(frozen=True)
class CrossingEvent:
    """One trajectory's change of world branch inside an overlap window."""

    layer: int
    particle: int
    trajectory: int
    from_branch: int
    to_branch: int


@dataclass
class CrossingReport:
    events: list[CrossingEvent]
    crossing_fraction: float
    violations: int
    n_trajectories: int
    ambiguous_fraction: float


def _site_of(positions: np.ndarray, grid: LatticeGrid) -> np.ndarray:
    u = np.floor((positions - grid.x_min) / grid.dx + 0.5).astype(np.int64)
    if grid.boundary == "periodic":
        return u % grid.n_sites
    return np.clip(u, 0, grid.n_sites - 1)


def _projection_tables(joint: TrackGraph, axis: int):
    """Per layer: (site, component) membership of joint-component projections."""
    tables = []
    for t in range(len(joint.labels)):
        lab = joint.labels[t]
        k = joint.n_components[t]
        n = lab.shape[axis]
        proj = np.zeros((n, k + 1), dtype=bool)
        for c in range(1, k + 1):
            hit = (lab == c).any(axis=1 - axis)
            proj[:, c] = hit
        tables.append(proj)
    return tables


def _reachable(edges_by_layer, start_layer, start_comp, end_layer, end_comp) -> bool:
    frontier = {start_comp}
    for t in range(start_layer, end_layer):
        step = edges_by_layer.get(t, {})
        nxt = set()
        for c in frontier:
            nxt |= step.get(c, set())
        frontier = nxt
        if not frontier:
            return False
    return end_comp in frontier


def detect_crossings(
    runs: dict[int, EnsembleRun], tracks: TrackSet, grid: LatticeGrid
) -> CrossingReport:
    """Classify world-branch changes of transported trajectories.

    A trajectory's world at a layer is the unique joint component whose
    axis projection contains its position; layers where several
    projections contain it are ambiguous and carry no label.  A change
    between consecutive labeled worlds counts as a crossing when the new
    component is not connected to the old one through the joint branch
    graph; such events must be bridged by at least one ambiguous layer
    (projections overlapping), and transitions violating that are counted
    separately as consistency violations.
    """
    joint = tracks.joint
    n_layers = joint.n_layers
    edges_by_layer: dict[int, dict[int, set[int]]] = {}
    for (t, a), (_, b) in joint.edges:
        edges_by_layer.setdefault(t, {}).setdefault(a, set()).add(b)

    events: list[CrossingEvent] = []
    violations = 0
    crossed = 0
    ambiguous_counts = 0
    total_counts = 0
    n_traj = 0
    reach_cache: dict[tuple[int, int, int, int], bool] = {}

    for particle, run in runs.items():
        proj = _projection_tables(joint, axis=particle - 1)
        n_traj = max(n_traj, run.n_trajectories)
        # per-layer site indices for the whole batch
        sites = np.empty((run.n_trajectories, n_layers + 1), dtype=np.int64)
        for t in range(n_layers + 1):
            sites[:, t] = _site_of(run.layer_positions(t, n_layers), grid)
        counts = np.empty_like(sites)
        labels = np.empty_like(sites)
        for t in range(n_layers + 1):
            tab = proj[t]
            counts[:, t] = tab[sites[:, t]].sum(axis=1)
            labels[:, t] = np.argmax(tab[sites[:, t]], axis=1)
        ambiguous_counts += int(np.sum(counts > 1))
        total_counts += counts.size
        single = counts == 1

        # Component labels are numbered per layer, so world identity across
        # layers is decided by graph reachability alone, never by comparing
        # label integers from different layers.
        traj_crossed = np.zeros(run.n_trajectories, dtype=bool)
        for i in range(run.n_trajectories):
            last_t = -1
            last_c = 0
            for t in range(n_layers + 1):
                if not single[i, t]:
                    continue
                c = int(labels[i, t])
                if last_t >= 0:
                    key = (last_t, last_c, t, c)
                    hit = reach_cache.get(key)
                    if hit is None:
                        hit = _reachable(edges_by_layer, last_t, last_c, t, c)
                        reach_cache[key] = hit
                    if not hit:
                        events.append(
                            CrossingEvent(
                                layer=t,
                                particle=particle,
                                trajectory=i,
                                from_branch=last_c,
                                to_branch=c,
                            )
                        )
                        traj_crossed[i] = True
                        if not np.any(counts[i, last_t : t + 1] > 1):
                            violations += 1
                last_t, last_c = t, c
        crossed += int(np.sum(traj_crossed))

    total_traj = sum(run.n_trajectories for run in runs.values())
    return CrossingReport(
        events=sorted(events, key=lambda e: (e.particle, e.trajectory, e.layer)),
        crossing_fraction=crossed / total_traj if total_traj else 0.0,
        violations=violations,
        n_trajectories=total_traj,
        ambiguous_fraction=ambiguous_counts / total_counts if total_counts else 0.0,
    )
