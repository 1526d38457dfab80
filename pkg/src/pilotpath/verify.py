"""Invariant battery: structural identities checked on a built scenario.

Each check states what must hold for any correct run of the engines, with
the bound it is held to.  The battery is scenario-driven so the checks run
on the system the user actually configured, not on a toy stand-in; checks
that need a product start are skipped (with the reason recorded) when the
scenario begins entangled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import paths as pp
from .circuit import evolve_circuit, marginal_probability
from .dirac import (
    GammaSet,
    PotentialField,
    WalkStep,
    continuity_residual,
    phase_matrices,
    run_walk,
)
from .errors import ResourceCapError, ValidationError
from .guidance import (
    equivariance_test,
    integrate_batch,
    sample_density,
    velocity_stack,
)
from .protocols import STREAM_FORWARD_SAMPLE, stream_rng
from .scenario import CircuitSystem, WalkSystem, build_circuit, build_walk


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    bound: float
    note: str = ""
    skipped: bool = False


@dataclass
class VerifyReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed or c.skipped for c in self.checks)

    def add(self, name: str, value: float, bound: float, note: str = "") -> None:
        self.checks.append(CheckResult(name, bool(value <= bound), float(value), float(bound), note))

    def skip(self, name: str, note: str) -> None:
        self.checks.append(CheckResult(name, False, float("nan"), float("nan"), note, skipped=True))

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "skipped": c.skipped,
                    "value": None if np.isnan(c.value) else c.value,
                    "bound": None if np.isnan(c.bound) else c.bound,
                    "note": c.note,
                }
                for c in self.checks
            ],
        }


def _verify_paths(report: VerifyReport, context, n_window: int, caps, with_current: bool) -> None:
    ens = pp.enumerate_all(context, n_window, caps=caps, keep_levels=True)
    direct = pp.direct_state(context, n_window)
    resid = float(np.abs(ens.reconstruct_rows() - direct.amps).max())
    report.add("path_equivalence", resid, 1e-10, f"{ens.n_paths} paths over {n_window} layers")

    table = pp.overlap_table(ens, with_increments=True)
    worst_tele = 0.0
    worst_mag = 0.0
    for grp in table.groups.values():
        if grp.increments is not None and grp.overlaps.shape[0] > 1:
            rebuilt = 1.0 + grp.increments.sum(axis=0)
            worst_tele = max(worst_tele, float(np.abs(rebuilt - grp.overlaps).max()))
        worst_mag = max(worst_mag, float(np.abs(grp.overlaps).max()))
    report.add("overlap_telescoping", worst_tele, 1e-12)
    report.add("overlap_magnitude", max(worst_mag - 1.0, 0.0), 1e-12)

    if with_current:
        cur = pp.path_sum_current(ens)
        report.add(
            "diagonal_current_zero",
            float(np.abs(cur.diagonal_term).max()),
            0.0,
            "velocity matrix has zero diagonal, so same-path terms vanish identically",
        )


def _verify_walk(scn: dict, system: WalkSystem, report: VerifyReport) -> None:
    grid = system.grid

    GammaSet().validate()
    report.add("gamma_algebra", 0.0, 0.0, "anticommutation table holds exactly")

    history = run_walk(
        system.state0,
        grid,
        system.step1,
        system.step2,
        system.n_layers,
        couplings=system.couplings,
        record_joint=True,
        record_states=True,
    )
    norms = history.density1.sum(axis=1) * grid.dx
    report.add("unitarity_drift", float(np.abs(norms - 1.0).max()), 1e-10)
    norms2 = history.density2.sum(axis=1) * grid.dx
    report.add("marginal_normalization", float(np.abs(norms2 - 1.0).max()), 1e-10)

    # Altering what happens to the second particle must leave the first
    # particle's marginal density untouched.  With coupling layers present
    # only alterations after the last coupling are marginal-preserving (a
    # coupling is an interaction, not signaling), so the alteration window
    # shrinks accordingly.
    p2 = scn["particles"][1]
    alt_potential = PotentialField.barrier(grid, 0.83, grid.x_min + 0.25 * grid.extent, grid.x_min + 0.6 * grid.extent)
    alt_step2 = WalkStep(grid, phase_matrices(grid, float(p2["mass"]), 1.0, alt_potential))
    first_safe = (max(system.couplings) + 1) if system.couplings else 0
    if first_safe >= system.n_layers:
        report.skip("no_signaling", "a coupling acts at the final layer; no local-change window")
    else:
        steps2 = [system.step2] * first_safe + [alt_step2] * (system.n_layers - first_safe)
        alt_history = run_walk(
            system.state0,
            grid,
            system.step1,
            steps2,
            system.n_layers,
            couplings=system.couplings,
            record_joint=False,
        )
        gap = float(np.abs(history.density1 - alt_history.density1).max())
        note = (
            "second particle's potential replaced on every layer"
            if first_safe == 0
            else f"second particle's potential replaced from layer {first_safe} on"
        )
        report.add("no_signaling", gap, 1e-12, note)

    mid = system.n_layers // 2
    residual = continuity_residual(history.states[mid], history.states[mid + 1], grid, particle=1)
    report.add(
        "continuity_residual",
        float(residual.marginal),
        5.0 * grid.dx,
        f"layers {mid}-{mid + 1}; discretization residual, first order in the spacing",
    )

    try:
        context = system.path_context()
        _verify_paths(report, context, scn["paths"]["layer"], system.caps, with_current=True)
    except (ValidationError, ResourceCapError) as exc:
        for name in ("path_equivalence", "overlap_telescoping", "overlap_magnitude", "diagonal_current_zero"):
            report.skip(name, str(exc))

    stack = velocity_stack(history, particle=1, eps_rel=scn["protocol"]["eps_node_rel"])
    rng = stream_rng(int(scn["seed"]), STREAM_FORWARD_SAMPLE)
    substeps = int(scn["protocol"]["substeps"])
    count = min(int(scn["protocol"]["count"]), 2000)
    x0 = sample_density(history.density1[0], grid, count, rng)
    fwd = integrate_batch(stack, x0, "forward", substeps)

    # The round trip is run at a fixed fine substep count so the bound does
    # not depend on the scenario's protocol settings.
    rev_sub = max(substeps, 32)
    fwd_fine = fwd if rev_sub == substeps else integrate_batch(stack, x0, "forward", rev_sub)
    back = integrate_batch(stack, fwd_fine.positions[:, -1], "backward", rev_sub)
    ok = (fwd_fine.frozen < 0) & (back.frozen < 0)
    if ok.any():
        gap = np.abs(back.positions[ok, -1] - x0[ok])
        if grid.boundary == "periodic":
            gap = np.minimum(gap, grid.extent - gap)
        report.add(
            "reversibility",
            float(gap.max()),
            5e-6,
            f"{int(ok.sum())}/{count} round trips at {rev_sub} substeps, node-flagged excluded",
        )
    else:
        report.skip("reversibility", "every trajectory hit a node-masked region")

    ks = equivariance_test(fwd, history.density1, grid)
    report.add(
        "equivariance_quick",
        float(np.max(ks)),
        float(scn["protocol"]["equivariance_bound"]),
        f"{count} samples, worst layer KS; bound set by the scenario's resolution",
    )

    rng_a = stream_rng(int(scn["seed"]), STREAM_FORWARD_SAMPLE)
    rng_b = stream_rng(int(scn["seed"]), STREAM_FORWARD_SAMPLE)
    xa = sample_density(history.density1[0], grid, 512, rng_a)
    xb = sample_density(history.density1[0], grid, 512, rng_b)
    report.add(
        "sampling_determinism",
        0.0 if np.array_equal(xa, xb) else 1.0,
        0.0,
        "same seed and stream give identical draws",
    )


def _verify_circuit(scn: dict, system: CircuitSystem, report: VerifyReport) -> None:
    context = system.context
    state = context.initial_state()
    drift = 0.0
    for layer in context.layers:
        state = evolve_circuit(state, [layer])
        drift = max(drift, abs(float(np.linalg.norm(state.amps)) - 1.0))
    report.add("unitarity_drift", drift, 1e-10)

    # A local change on the second particle with no coupling acting after
    # it cannot move the first particle's mode probabilities.  Couplings
    # applied in the same layer sit after the one-particle unitaries and
    # are phase-diagonal, so replacing the final layer's second-particle
    # unitary is always a marginal-preserving alteration.
    rng = stream_rng(int(scn["seed"]), 3)
    from scipy.stats import unitary_group

    from .circuit import CircuitLayer

    last = context.layers[-1]
    alt_last = CircuitLayer(
        last.u_a, unitary_group.rvs(context.basis.dim_b, random_state=rng), last.phases
    )
    ref = evolve_circuit(context.initial_state(), context.layers)
    alt = evolve_circuit(context.initial_state(), context.layers[:-1] + [alt_last])
    gap = np.abs(marginal_probability(ref, "a") - marginal_probability(alt, "a"))
    report.add("no_signaling", float(gap.max()), 1e-12, "final-layer alteration")

    _verify_paths(report, context, len(context.layers), system.caps, with_current=False)

    rng_a = stream_rng(int(scn["seed"]), STREAM_FORWARD_SAMPLE)
    rng_b = stream_rng(int(scn["seed"]), STREAM_FORWARD_SAMPLE)
    report.add(
        "sampling_determinism",
        0.0 if rng_a.uniform(size=64).tolist() == rng_b.uniform(size=64).tolist() else 1.0,
        0.0,
    )


def run_verification(scn: dict) -> VerifyReport:
    """Run every applicable invariant check on a resolved scenario."""
    report = VerifyReport()
    if scn["engine"] == "walk":
        _verify_walk(scn, build_walk(scn), report)
    else:
        _verify_circuit(scn, build_circuit(scn), report)
    return report
