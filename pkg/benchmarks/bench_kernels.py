"""Compare the compiled and numpy kernel backends on training workloads.

    python benchmarks/bench_kernels.py [--repeat 3]

Prints wall time per backend for an epoch loop at desk size ([16, 32, 4],
2048 examples) and at MNIST size ([784, 256, 10], random data), plus the
largest disagreement in the resulting parameters.
"""

import argparse
import time

import numpy as np

from cumlr import _backend
from cumlr.nn import init_mlp, pack

WORKLOADS = {
    "desk [16,32,4] N=2048 bs=64": ((16, 32, 4), 2048, 64),
    "mnist [784,256,10] N=4096 bs=64": ((784, 256, 10), 4096, 64),
}


def run(kern, sizes, n, bs, epochs, use_adam):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (n, sizes[0]))
    y = rng.integers(0, sizes[-1], n).astype(np.int64)
    theta = pack(init_mlp(sizes, 0))
    m, v = np.zeros_like(theta), np.zeros_like(theta)
    t = 0
    start = time.perf_counter()
    for e in range(epochs):
        perm = np.random.default_rng([0, e]).permutation(n).astype(np.int64)
        _, t = kern.run_epoch(theta, list(sizes), X, y, perm, bs, 1e-3 if use_adam else 0.05,
                              use_adam, m, v, t, 0.9, 0.999, 1e-8)
    return time.perf_counter() - start, theta


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=4)
    args = ap.parse_args()
    names = _backend.available()
    print(f"backends available: {', '.join(names)}")
    for label, (sizes, n, bs) in WORKLOADS.items():
        for opt in ("sgd", "adam"):
            times, thetas = {}, {}
            for name in names:
                kern = _backend.load(name)
                best = float("inf")
                for _ in range(args.repeat):
                    dt, theta = run(kern, sizes, n, bs, args.epochs, opt == "adam")
                    best = min(best, dt)
                times[name], thetas[name] = best, theta
            line = "  ".join(f"{k}={v * 1e3:8.1f} ms" for k, v in times.items())
            extra = ""
            if len(names) == 2:
                diff = np.max(np.abs(thetas["cython"] - thetas["python"]))
                extra = f"  speedup={times['python'] / times['cython']:.2f}x  max|dtheta|={diff:.1e}"
            print(f"{label:34s} {opt:4s}  {line}{extra}")


if __name__ == "__main__":
    main()
