#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-numpy fallback.

Covers the three hot paths (tree completion, weight accumulation, Metropolis
sweeps) on a small and a large grid, plus one end-to-end estimate.  Both
backends produce bit-identical outputs (verified here as well as in the test
suite); the benchmark reports the speed difference.

Usage: python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import importlib.util
import time

import numpy as np

from dualpotts._kernels import _fallback
from dualpotts.dualgraph import build_partition, completion_plan, log_edge_factor_tables
from dualpotts.model import build_torus_model

if importlib.util.find_spec("dualpotts._kernels._core") is None:
    raise SystemExit("compiled kernel not built; nothing to compare")

from dualpotts._kernels import _core  # noqa: E402


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(width, height, q, batch, sweeps, repeat):
    m = build_torus_model(width, height, q, {"uniform": [1.1, 3.0], "seed": 0})
    partition = build_partition(m)
    plan = completion_plan(m, partition)
    rng = np.random.default_rng(1)
    xa = rng.integers(0, q, size=(batch, plan.cotree_bonds.size), dtype=np.int8)
    lg0, lg1 = log_edge_factor_tables(q, m.couplings)
    lvl0 = np.zeros(m.num_bonds)
    lvl1 = np.zeros(m.num_bonds)
    t0, t1 = log_edge_factor_tables(q, m.couplings[plan.tree_bonds] ** 1.5)
    lvl0[plan.tree_bonds] = t0
    lvl1[plan.tree_bonds] = t1
    proposals = rng.integers(0, q, size=(batch, sweeps, plan.cotree_bonds.size), dtype=np.int8)
    accept_u = rng.random((batch, sweeps, plan.cotree_bonds.size))

    print(f"\n{width}x{height} grid, q={q}, batch={batch}")
    outputs = {}
    for name, kernel in (("compiled", _core), ("python  ", _fallback)):
        values = np.zeros((batch, m.num_bonds), dtype=np.int8)
        values[:, plan.cotree_bonds] = xa

        def complete(values=values, kernel=kernel):
            work = values.copy()
            kernel.complete_batch(
                work, None, q,
                plan.step_site, plan.step_bond, plan.step_sign,
                plan.step_other_bonds, plan.step_other_signs,
                plan.root, plan.root_bonds, plan.root_signs,
            )
            return work

        completed = complete()

        def weights(kernel=kernel, completed=completed):
            return kernel.bond_log_sum(
                completed, plan.tree_bonds, lg0[plan.tree_bonds], lg1[plan.tree_bonds]
            )

        def metro(kernel=kernel, completed=completed):
            work = completed.copy()
            kernel.metropolis_level(
                work, q, plan.cotree_bonds,
                lg0[plan.cotree_bonds], lg1[plan.cotree_bonds],
                lvl0, lvl1,
                plan.cycle_offsets, plan.cycle_bonds, plan.cycle_signs,
                proposals, accept_u,
            )
            return work

        times = {
            "complete": timeit(complete, repeat),
            "weights": timeit(weights, repeat),
            "metropolis": timeit(metro, repeat),
        }
        outputs[name] = (completed, weights(), metro())
        row = "  ".join(f"{k}={v * 1e3:8.2f}ms" for k, v in times.items())
        print(f"  {name}  {row}")

    for a, b in zip(outputs["compiled"], outputs["python  "]):
        assert np.array_equal(a, b), "backends disagree"
    print("  outputs bit-identical across backends")


def bench_estimate(repeat):
    import dualpotts.estimators as est
    from dualpotts.estimators import SamplerSpec, estimate_importance

    m = build_torus_model(30, 30, 4, {"uniform": [1.0, 4.0], "seed": 2})
    partition = build_partition(m)
    spec = SamplerSpec(method="importance", L=10_000, seed=3)

    print("\nend-to-end: importance sampling, 30x30 q=4, L=10000")
    results = {}
    saved = est._kernels
    try:
        for name, kernel in (("compiled", _core), ("python  ", _fallback)):
            est._kernels = kernel
            best = float("inf")
            for _ in range(repeat):
                t0 = time.perf_counter()
                results[name] = estimate_importance(m, partition, spec)
                best = min(best, time.perf_counter() - t0)
            print(f"  {name}  {best * 1e3:8.1f}ms   ln_Z/N = {results[name].log_Z_per_site:.6f}")
    finally:
        est._kernels = saved
    assert results["compiled"] == results["python  "], "backends disagree"
    print("  estimates bit-identical across backends")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    bench_case(3, 3, 3, batch=100_000, sweeps=5, repeat=args.repeat)
    bench_case(30, 30, 4, batch=2_000, sweeps=2, repeat=args.repeat)
    bench_estimate(args.repeat)


if __name__ == "__main__":
    main()
