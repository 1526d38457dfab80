"""Scenario files: schema validation, defaults, and system builders.

A scenario JSON picks an engine (lattice walk or abstract circuit), the
initial state as a weighted sum of product branches, per-particle masses
and potentials, optional diagonal phase couplings, and the knobs of the
downstream protocols.  Loading validates against the shipped schema, fills
every default explicitly, and returns the resolved dictionary; runs echo
that resolved form next to their artifacts so every output is reproducible
from (scenario, seed) alone.

Randomized circuit scenarios draw their unitaries from a dedicated
counter-mode stream of the scenario seed (stream index 2; streams 0 and 1
belong to the protocol samplers), so artifacts never depend on call order.
"""

from __future__ import annotations

import copy
import importlib.resources
import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import unitary_group

from .circuit import CircuitLayer, JointState, ModeSpinBasis
from .dirac import (
    LatticeGrid,
    PotentialField,
    WalkStep,
    build_dirac_step,
    gaussian_profile,
    positive_energy_packet,
    spinor_from_spec,
    to_circuit_layers,
)
from .errors import ValidationError
from .paths import PathCaps, PathContext
from .protocols import stream_rng

STREAM_SCENARIO_BUILD = 2

_DEFAULTS = {
    "seed": 12345,
    "protocol": {
        "count": 10_000,
        "substeps": 4,
        "eps_node_rel": 1e-9,
        "track_threshold_rel": 1e-4,
        # Transport equivariance degrades first-order in the step on rough
        # fields (standing-wave interference); scenarios on coarse grids
        # declare the bound their resolution supports.
        "equivariance_bound": 0.05,
    },
    "paths": {"pair_cap": 2_000_000, "memory_cap_mb": 512, "layer": None},
}


def _schema():
    ref = importlib.resources.files("pilotpath") / "schemas" / "scenario.schema.json"
    return json.loads(ref.read_text())


def validate_scenario(raw: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(raw, _schema())
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ValidationError(f"scenario schema violation at '{path}': {exc.message}") from exc


def _merge_defaults(raw: dict, defaults: dict) -> dict:
    out = copy.deepcopy(raw)
    for key, val in defaults.items():
        if key not in out:
            out[key] = copy.deepcopy(val)
        elif isinstance(val, dict) and isinstance(out[key], dict):
            out[key] = _merge_defaults(out[key], val)
    return out


def resolve_scenario(raw: dict) -> dict:
    """Validate and return the scenario with every default made explicit."""
    validate_scenario(raw)
    scn = _merge_defaults(raw, _DEFAULTS)
    if scn["engine"] == "walk":
        grid = scn["grid"]
        grid.setdefault("x_min", 0.0)
        grid.setdefault("boundary", "periodic")
        for particle in scn["particles"]:
            particle.setdefault("charge", 0.0)
            particle.setdefault("potential", {"preset": "free"})
        scn.setdefault("couplings", [])
        if scn["paths"]["layer"] is None:
            scn["paths"]["layer"] = min(4, scn["n_layers"])
        # keep the preset key so a resolved echo is itself a loadable scenario
        scn["initial"] = {"preset": "branches", "branches": expand_initial(scn["initial"])}
    return scn


def load_scenario(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return resolve_scenario(raw)


def bundled_scenario(name: str) -> dict:
    ref = importlib.resources.files("pilotpath") / "scenarios" / f"{name}.json"
    if not ref.is_file():
        raise ValidationError(f"no bundled scenario named {name!r}")
    return resolve_scenario(json.loads(ref.read_text()))


# ----------------------------------------------------------------------------
# Initial-state presets, all expanded to weighted product branches


def _packet_defaults(packet: dict) -> dict:
    out = dict(packet)
    out.setdefault("kind", "gaussian")
    out.setdefault("momentum", 0.0)
    if out["kind"] == "gaussian":
        out.setdefault("spinor", "up")
    return out


def expand_initial(initial: dict) -> list[dict]:
    """Rewrite a named preset as an explicit list of product branches."""
    preset = initial.get("preset", "branches")
    if preset == "branches":
        return [
            {
                "weight": b.get("weight", 1.0),
                "packet1": _packet_defaults(b["packet1"]),
                "packet2": _packet_defaults(b["packet2"]),
            }
            for b in initial["branches"]
        ]
    if preset == "gaussian-product":
        return [
            {
                "weight": 1.0,
                "packet1": _packet_defaults(initial["packet1"]),
                "packet2": _packet_defaults(initial["packet2"]),
            }
        ]
    w = 1.0 / np.sqrt(2.0)
    if preset == "entangled-mirror":
        c1, c2 = initial["centers"]
        sigma = initial["sigma"]
        k = initial["momentum"]
        kind = initial.get("kind", "walk-positive")
        mk = lambda c, mom: _packet_defaults(
            {"center": c, "sigma": sigma, "momentum": mom, "kind": kind}
        )
        return [
            {"weight": w, "packet1": mk(c1, k), "packet2": mk(c2, -k)},
            {"weight": w, "packet1": mk(c2, -k), "packet2": mk(c1, k)},
        ]
    if preset == "spin-singlet":
        c1, c2 = initial["centers"]
        sigma = initial["sigma"]
        mk = lambda c, sp: _packet_defaults({"center": c, "sigma": sigma, "spinor": sp})
        return [
            {"weight": w, "packet1": mk(c1, "chirality+"), "packet2": mk(c2, "chirality+b")},
            {"weight": -w, "packet1": mk(c1, "chirality+b"), "packet2": mk(c2, "chirality+")},
        ]
    if preset == "measurement-split":
        c1 = initial["center1"]
        s1 = initial["sigma1"]
        pointer = initial["pointer"]
        ps = pointer["sigma"]
        psp = pointer.get("spinor", "chirality+")
        return [
            {
                "weight": w,
                "packet1": _packet_defaults({"center": c1, "sigma": s1, "spinor": "chirality+"}),
                "packet2": _packet_defaults(
                    {"center": pointer["center_a"], "sigma": ps, "spinor": psp}
                ),
            },
            {
                "weight": w,
                "packet1": _packet_defaults({"center": c1, "sigma": s1, "spinor": "chirality-"}),
                "packet2": _packet_defaults(
                    {"center": pointer["center_b"], "sigma": ps, "spinor": psp}
                ),
            },
        ]
    raise ValidationError(f"unknown initial-state preset {preset!r}")


def build_packet(grid: LatticeGrid, spec: dict, mass: float) -> np.ndarray:
    """(n_sites, 4) spinor field of one product-branch factor.

    An optional support_radius zeroes the field beyond that distance from
    the center (minimal-image for periodic grids) and renormalizes, giving
    path conditioning an exactly sparse start instead of machine-size tails.
    """
    kind = spec.get("kind", "gaussian")
    if kind == "walk-positive":
        if "spinor" in spec:
            raise ValidationError("walk-positive packets fix their own spinor structure")
        field = positive_energy_packet(
            grid, mass, spec["center"], spec["sigma"], spec.get("momentum", 0.0)
        )
    elif kind == "gaussian":
        profile = gaussian_profile(grid, spec["center"], spec["sigma"], spec.get("momentum", 0.0))
        spinor = spinor_from_spec(spec.get("spinor", "up"))
        field = profile[:, None] * spinor[None, :]
    else:
        raise ValidationError(f"unknown packet kind {kind!r}")
    radius = spec.get("support_radius")
    if radius is not None:
        d = np.abs(grid.positions() - float(spec["center"]))
        if grid.boundary == "periodic":
            d = np.minimum(d, grid.extent - d)
        field = np.where(d[:, None] <= float(radius), field, 0.0)
        nrm = np.linalg.norm(field)
        if nrm < 1e-6:
            raise ValidationError("support_radius leaves the packet with no weight")
        field = field / nrm
    return field


def _weight(value) -> complex:
    if isinstance(value, (list, tuple)):
        return complex(value[0], value[1])
    return complex(value)


def build_initial_state(grid: LatticeGrid, branches: list[dict], masses: tuple[float, float]) -> JointState:
    basis = grid.basis()
    amps = np.zeros((basis.dim_a, basis.dim_b), dtype=np.complex128)
    for branch in branches:
        p1 = build_packet(grid, branch["packet1"], masses[0]).reshape(-1)
        p2 = build_packet(grid, branch["packet2"], masses[1]).reshape(-1)
        amps += _weight(branch.get("weight", 1.0)) * np.outer(p1, p2)
    norm = np.linalg.norm(amps)
    if norm < 0.1:
        raise ValidationError("initial branches nearly cancel; state is degenerate")
    return JointState(basis, amps / norm)


# ----------------------------------------------------------------------------
# Potentials and couplings


def build_potential(grid: LatticeGrid, spec: dict) -> PotentialField:
    preset = spec.get("preset", "free")
    if preset == "free":
        return PotentialField.free(grid)
    if preset == "constant-a0":
        return PotentialField.constant_a0(grid, spec["v0"])
    if preset == "barrier":
        return PotentialField.barrier(grid, spec["v0"], spec["lo"], spec["hi"])
    if preset == "tables":
        return PotentialField(np.asarray(spec["a0"], float), np.asarray(spec["a1"], float))
    raise ValidationError(f"unknown potential preset {preset!r}")


def build_couplings(grid: LatticeGrid, specs: list[dict], n_layers: int) -> dict[int, np.ndarray]:
    """Joint diagonal phase tables per layer, additive across entries."""
    basis = grid.basis()
    out: dict[int, np.ndarray] = {}
    x = grid.positions()
    for spec in specs:
        if spec.get("kind", "window-phase") != "window-phase":
            raise ValidationError(f"unknown coupling kind {spec.get('kind')!r}")
        lo1, hi1 = spec["window1"]
        lo2, hi2 = spec["window2"]
        ind1 = np.repeat((x >= lo1) & (x < hi1), 4).astype(np.float64)
        ind2 = np.repeat((x >= lo2) & (x < hi2), 4).astype(np.float64)
        table = float(spec["strength"]) * np.outer(ind1, ind2)
        layers = spec.get("layers", "all")
        layer_list = range(n_layers) if layers == "all" else [int(t) for t in layers]
        for t in layer_list:
            if not 0 <= t < n_layers:
                raise ValidationError(f"coupling layer {t} out of range")
            if t in out:
                out[t] = out[t] + table
            else:
                out[t] = table.copy()
    for t, tab in out.items():
        if tab.shape != (basis.dim_a, basis.dim_b):
            raise ValidationError("coupling table shape mismatch")
    return out


# ----------------------------------------------------------------------------
# Built systems


@dataclass
class WalkSystem:
    """Everything a walk scenario run needs, constructed and validated."""

    scenario: dict
    grid: LatticeGrid
    state0: JointState
    step1: WalkStep
    step2: WalkStep
    couplings: dict[int, np.ndarray]
    n_layers: int
    caps: PathCaps

    def path_context(self, layer: int | None = None) -> PathContext:
        """Path conditioning over the first `layer` layers (product starts only)."""
        n = self.scenario["paths"]["layer"] if layer is None else layer
        layers = to_circuit_layers(self.step1, self.step2, n, self.couplings)
        return PathContext.from_joint_state(self.state0, layers, grid=self.grid)


def build_walk(scenario: dict) -> WalkSystem:
    g = scenario["grid"]
    grid = LatticeGrid(
        n_sites=int(g["n_sites"]),
        dx=float(g["dx"]),
        dt=float(g["dt"]),
        x_min=float(g["x_min"]),
        boundary=g["boundary"],
    )
    p1, p2 = scenario["particles"]
    masses = (float(p1["mass"]), float(p2["mass"]))
    step1 = build_dirac_step(grid, masses[0], float(p1["charge"]), build_potential(grid, p1["potential"]))
    step2 = build_dirac_step(grid, masses[1], float(p2["charge"]), build_potential(grid, p2["potential"]))
    state0 = build_initial_state(grid, scenario["initial"]["branches"], masses)
    couplings = build_couplings(grid, scenario.get("couplings", []), int(scenario["n_layers"]))
    caps = PathCaps(
        pair_cap=int(scenario["paths"]["pair_cap"]),
        memory_cap_bytes=int(scenario["paths"]["memory_cap_mb"]) * 2**20,
    )
    return WalkSystem(
        scenario=scenario,
        grid=grid,
        state0=state0,
        step1=step1,
        step2=step2,
        couplings=couplings,
        n_layers=int(scenario["n_layers"]),
        caps=caps,
    )


@dataclass
class CircuitSystem:
    scenario: dict
    context: PathContext
    caps: PathCaps


def _vector_from_spec(spec, dim: int, what: str) -> np.ndarray:
    if isinstance(spec, dict) and "basis_point" in spec:
        v = np.zeros(dim, dtype=np.complex128)
        v[int(spec["basis_point"])] = 1.0
        return v
    arr = np.asarray(spec, dtype=np.float64)
    if arr.shape != (dim, 2):
        raise ValidationError(f"{what} must be a basis point or a list of {dim} [re, im] pairs")
    return arr[:, 0] + 1j * arr[:, 1]


def build_circuit(scenario: dict) -> CircuitSystem:
    b = scenario["basis"]
    basis = ModeSpinBasis(
        int(b["modes_a"]), int(b["spins_a"]), int(b["modes_b"]), int(b["spins_b"])
    )
    spec = scenario["layers"]
    layers: list[CircuitLayer] = []
    if isinstance(spec, dict) and "random" in spec:
        cfg = spec["random"]
        rng = stream_rng(int(scenario["seed"]), STREAM_SCENARIO_BUILD)
        scale = float(cfg.get("coupling_scale", 0.0))
        for _ in range(int(cfg["n_layers"])):
            u_a = unitary_group.rvs(basis.dim_a, random_state=rng)
            u_b = unitary_group.rvs(basis.dim_b, random_state=rng)
            phases = None
            if scale > 0.0:
                phases = scale * rng.uniform(-np.pi, np.pi, size=(basis.dim_a, basis.dim_b))
            layers.append(CircuitLayer(u_a, u_b, phases))
    else:
        for entry in spec:
            u_a = np.asarray(entry["u_a"], dtype=np.complex128)
            u_b = np.asarray(entry["u_b"], dtype=np.complex128)
            phases = entry.get("phases")
            layers.append(
                CircuitLayer(u_a, u_b, None if phases is None else np.asarray(phases, float))
            )
    init = scenario["initial"]
    psi1 = _vector_from_spec(init["psi1"], basis.dim_a, "psi1")
    psi2 = _vector_from_spec(init["psi2"], basis.dim_b, "psi2")
    context = PathContext(layers, basis, psi1, psi2)
    caps = PathCaps(
        pair_cap=int(scenario["paths"]["pair_cap"]),
        memory_cap_bytes=int(scenario["paths"]["memory_cap_mb"]) * 2**20,
    )
    return CircuitSystem(scenario=scenario, context=context, caps=caps)
