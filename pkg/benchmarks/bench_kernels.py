"""Benchmark the compiled convolution kernels against the numpy fallback.

Runs forward, input-gradient, and parameter-gradient passes for a few
representative layer shapes and prints a timing table.  Use
``STACKDENOISE_THREADS`` to control the compiled backend's thread count.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats 5] [--dtype float32]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from stackdenoise.kernels import available_backends, get_backend

# (label, batch, c_in, c_out, height, width)
CASES = [
    ("encoder 64x64", 16, 32, 32, 64, 64),
    ("encoder 128x128", 4, 16, 16, 128, 128),
    ("bottleneck 8x8", 16, 128, 128, 8, 8),
    ("head 64x64", 16, 24, 1, 64, 64),
]


def _time_call(fn, *args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(label, n, c_in, c_out, h, w, dtype, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, c_in, h, w)).astype(dtype)
    weight = rng.standard_normal((c_out, c_in, 3, 3)).astype(dtype)
    bias = rng.standard_normal(c_out).astype(dtype)
    gy = rng.standard_normal((n, c_out, h, w)).astype(dtype)

    rows = []
    for name in available_backends():
        backend = get_backend(name)
        fwd = _time_call(backend.conv3x3_forward, x, weight, bias, repeats=repeats)
        bwd_in = _time_call(backend.conv3x3_backward_input, gy, weight, repeats=repeats)
        bwd_par = _time_call(backend.conv3x3_backward_params, x, gy, repeats=repeats)
        rows.append((name, fwd, bwd_in, bwd_par))
    print(f"\n{label}  (N={n}, {c_in}->{c_out}, {h}x{w}, {np.dtype(dtype).name})")
    print(f"  {'backend':<8} {'forward':>10} {'grad-in':>10} {'grad-par':>10}")
    for name, fwd, bwd_in, bwd_par in rows:
        print(f"  {name:<8} {fwd * 1e3:9.2f}ms {bwd_in * 1e3:9.2f}ms {bwd_par * 1e3:9.2f}ms")
    if len(rows) == 2:
        ref = {name: vals for name, *vals in rows}
        speedup = [ref["numpy"][i] / ref["cython"][i] for i in range(3)]
        print(f"  speedup  {speedup[0]:9.2f}x {speedup[1]:9.2f}x {speedup[2]:9.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = parser.parse_args()

    names = available_backends()
    print(f"available backends: {', '.join(names)}")
    for case in CASES:
        bench_case(*case, dtype=np.dtype(args.dtype).type, repeats=args.repeats)


if __name__ == "__main__":
    main()
