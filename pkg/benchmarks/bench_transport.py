"""Compare the two trajectory-transport backends on one workload.

The hot loop of the whole package is batch transport of trajectory
ensembles through layered velocity tables.  This script times the numba
kernel against the vectorized numpy fallback on identical inputs, checks
that the two backends agree bit for bit, and reports the speedup.

Run:  python3 benchmarks/bench_transport.py [--count N] [--substeps K]
"""

import argparse
import time

import numpy as np

from pilotpath import kernels


def synth_tables(n_layers: int, n_sites: int, seed: int):
    """Layered drift field with a thin masked node band, no engine needed."""
    rng = np.random.default_rng(seed)
    x = np.arange(n_sites) / n_sites
    t = np.arange(n_layers + 1)[:, None] / max(n_layers, 1)
    values = 0.8 * np.sin(2.0 * np.pi * (x[None, :] + 0.07 * t)) + 0.1
    masks = rng.random((n_layers + 1, n_sites)) < 0.02
    values[masks] = 0.0
    return values, masks


def run_backend(fn, values, masks, x0, substeps, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(values, masks, x0, 0.0, 1.0, float(values.shape[1]), True, 0.5, substeps, True)
        best = min(best, time.perf_counter() - start)
    return out, best


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=200_000, help="trajectories")
    ap.add_argument("--layers", type=int, default=40)
    ap.add_argument("--sites", type=int, default=128)
    ap.add_argument("--substeps", type=int, default=4)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    values, masks = synth_tables(args.layers, args.sites, seed=99)
    rng = np.random.default_rng(7)
    x0 = rng.uniform(0.0, float(args.sites), args.count)
    steps = args.count * args.layers * args.substeps

    print(f"workload: {args.count} trajectories x {args.layers} layers x {args.substeps} substeps")
    print(f"configured backend: {kernels.backend_name()}")

    (rec_np, frz_np), t_np = run_backend(
        kernels.transport_numpy, values, masks, x0, args.substeps, args.repeats
    )
    print(f"numpy : {t_np:8.3f} s  ({steps / t_np / 1e6:7.1f} M substeps/s)")

    try:
        # warm the JIT outside the timed region
        kernels.transport_numba(values, masks, x0[:8], 0.0, 1.0, float(args.sites), True, 0.5, 2, True)
    except RuntimeError as exc:
        print(f"numba : unavailable ({exc})")
        return 0

    (rec_nb, frz_nb), t_nb = run_backend(
        kernels.transport_numba, values, masks, x0, args.substeps, args.repeats
    )
    print(f"numba : {t_nb:8.3f} s  ({steps / t_nb / 1e6:7.1f} M substeps/s)")
    print(f"speedup: {t_np / t_nb:.1f}x")

    same = np.array_equal(rec_np, rec_nb) and np.array_equal(frz_np, frz_nb)
    print(f"bit-identical records and freeze flags: {same}")
    return 0 if same else 1


if __name__ == "__main__":
    raise SystemExit(main())
