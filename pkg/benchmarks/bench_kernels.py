"""Compare the compiled kernel backend against the pure-numpy twin.

Times the three hot-path primitives at training shapes (a minibatch step
and a bulk target-network pass) plus one composite "training step" of
forward + backward + Adam. Run from the repo root:

    python3 benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from coproq.kernels import DuelingLayout, available_backends, get_backend


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(lay, batch: int, repeats: int):
    rng = np.random.default_rng(0)
    p = rng.standard_normal(lay.size) * 0.05
    X = rng.standard_normal((batch, lay.obs_dim))
    dQ = rng.standard_normal((batch, lay.n_actions))
    g = rng.standard_normal(lay.size)
    rows = {}
    for name in available_backends():
        be = get_backend(name)
        q, cache = be.q_forward_cached(lay, p, X)
        fwd = best_of(lambda: be.q_forward(lay, p, X), repeats)
        bwd = best_of(lambda: be.q_backward(lay, p, cache, dQ), repeats)

        pp = p.copy()
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        state = {"t": 0}

        def adam():
            state["t"] += 1
            be.adam_update(pp, g, m, v, state["t"], 1e-4, 0.9, 0.999,
                           0.01 / batch)

        ad = best_of(adam, repeats)

        def step():
            _, c = be.q_forward_cached(lay, p, X)
            gg = be.q_backward(lay, p, c, dQ)
            state["t"] += 1
            be.adam_update(pp, gg, m, v, state["t"], 1e-4, 0.9, 0.999,
                           0.01 / batch)

        full = best_of(step, repeats)
        rows[name] = (fwd, bwd, ad, full)
    return rows


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args()

    lay = DuelingLayout(35, 5, 128)
    cases = [("minibatch", 128), ("stacked env+label", 256),
             ("bulk target pass", 8192)]
    names = available_backends()
    print(f"backends: {', '.join(names)}  "
          f"(net {lay.obs_dim}->{lay.hidden}->{lay.n_actions}, "
          f"{lay.size} params)")
    header = f"{'case':>18} {'batch':>6} {'op':>8}"
    for n in names:
        header += f" {n + ' (us)':>12}"
    if len(names) == 2:
        header += f" {'speedup':>8}"
    print(header)
    for label, batch in cases:
        rows = bench_case(lay, batch, args.repeats)
        for i, op in enumerate(["forward", "backward", "adam", "step"]):
            line = f"{label:>18} {batch:>6} {op:>8}"
            for n in names:
                line += f" {rows[n][i] * 1e6:>12.1f}"
            if len(names) == 2:
                base, comp = names[0], names[1]
                line += f" {rows[base][i] / rows[comp][i]:>7.2f}x"
            print(line)


if __name__ == "__main__":
    main()
