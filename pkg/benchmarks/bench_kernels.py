"""Time the numba and numpy backends of the edge kernels, plus one training epoch.

    python3 benchmarks/bench_kernels.py [--edges N] [--dim D] [--repeat R]
"""
import argparse
import tempfile
import time

import numpy as np

from kmclr import _kernels, synthetic
from kmclr.config import load_config
from kmclr.data import load_interactions, load_kg, split_leave_one_out
from kmclr.trainer import train


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_kernels(n_edges, n_nodes, dim, repeat):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n_nodes, dim))
    src, dst = rng.integers(n_nodes, size=n_edges), rng.integers(n_nodes, size=n_edges)
    w = rng.random(n_edges)
    vals = rng.normal(size=(n_edges, dim))
    out, ref = {}, {}
    for backend in ("numpy", "numba"):
        _kernels.set_backend(backend)
        _kernels.spmm(x, src, dst, w, n_nodes)  # compile / warm up
        out[backend] = (best_of(lambda: _kernels.spmm(x, src, dst, w, n_nodes), repeat),
                        best_of(lambda: _kernels.scatter_rows(vals, dst, n_nodes), repeat))
        ref[backend] = _kernels.spmm(x, src, dst, w, n_nodes)
    assert ref["numpy"].tobytes() == ref["numba"].tobytes(), "backends disagree"
    return out


def bench_training(repeat):
    with tempfile.TemporaryDirectory() as d:
        synthetic.write(synthetic.SyntheticSpec(seed=0), d)
        cfg = load_config(f"{d}/data.conf").replace(epochs_mul=2, epochs_kg=2, epochs_main=2)
        g = load_interactions(cfg.interactions, cfg.behavior_list, cfg.target_behavior)
        kg, split = load_kg(cfg.kg, g), split_leave_one_out(g, 0)
        out = {}
        for backend in ("numpy", "numba"):
            _kernels.set_backend(backend)
            train(cfg, split, kg)
            out[backend] = best_of(lambda: train(cfg, split, kg), repeat)
        return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--edges", type=int, default=200_000)
    ap.add_argument("--nodes", type=int, default=20_000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.NUMBA_AVAILABLE:
        raise SystemExit("numba is not installed")
    k = bench_kernels(args.edges, args.nodes, args.dim, args.repeat)
    print(f"edges={args.edges} nodes={args.nodes} dim={args.dim} (best of {args.repeat})")
    print(f"{'kernel':<14}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for j, name in enumerate(("spmm", "scatter_rows")):
        a, b = k["numpy"][j] * 1e3, k["numba"][j] * 1e3
        print(f"{name:<14}{a:>10.2f}{b:>10.2f}{a / b:>8.1f}x")
    t = bench_training(max(1, args.repeat // 2))
    a, b = t["numpy"] * 1e3, t["numba"] * 1e3
    print(f"{'train 6 ep':<14}{a:>10.1f}{b:>10.1f}{a / b:>8.1f}x")


if __name__ == "__main__":
    main()
