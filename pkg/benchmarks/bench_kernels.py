"""Benchmark the compiled convolution kernels against the numpy fallback.

Runs the three kernel primitives over the shapes this model actually
executes (encoder convs, TCN pointwise and depthwise convs, decoder
transpose) in both backends and prints a speedup table.  This is what the
routing heuristics in spexplus.tensor.kernels are based on.

Usage:  python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from spexplus.tensor import _kernels_np as np_impl

try:
    from spexplus.tensor import _convkernels as cy_impl
except ImportError:
    cy_impl = None

# (label, Cin, T, Cout, L, stride, dilation, groups)
SHAPES = [
    ("encoder L1 (1->N)", 1, 32000, 256, 20, 10, 1, 1),
    ("encoder L3 (1->N)", 1, 32140, 256, 160, 10, 1, 1),
    ("tcn 1x1 (O->P)", 256, 3199, 512, 1, 1, 1, 1),
    ("tcn depthwise d=1", 512, 3201, 512, 3, 1, 1, 512),
    ("tcn depthwise d=128", 512, 3455, 512, 3, 1, 128, 512),
    ("tiny 1x1 (O->P)", 32, 3199, 64, 1, 1, 1, 1),
    ("tiny depthwise d=8", 64, 3215, 64, 3, 1, 8, 64),
    ("mask head (O->N)", 32, 3199, 32, 1, 1, 1, 1),
]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_shape(label, Cin, T, Cout, L, stride, dilation, groups, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((Cin, T)).astype(np.float32)
    w = rng.standard_normal((Cout, Cin // groups, L)).astype(np.float32)
    K = np_impl._out_frames(T, L, stride, dilation)
    gy = rng.standard_normal((Cout, K)).astype(np.float32)

    ops = {
        "forward": (
            lambda impl: impl.conv1d_forward(x, w, stride, dilation, groups)),
        "grad_in": (
            lambda impl: impl.conv1d_grad_input(gy, w, stride, dilation, groups, T)),
        "grad_w": (
            lambda impl: impl.conv1d_grad_weight(gy, x, stride, dilation, groups, L)),
    }
    rows = []
    for op_name, call in ops.items():
        t_np = _time(lambda: call(np_impl), repeats)
        if cy_impl is not None:
            ref = call(np_impl)
            got = call(cy_impl)
            # Backends sum in different orders; allow f32 accumulation slack.
            err = np.abs(ref - got).max() / max(1.0, np.abs(ref).max())
            if err > 1e-4:
                raise AssertionError(f"backend mismatch on {label}/{op_name}: {err:g}")
            t_cy = _time(lambda: call(cy_impl), repeats)
        else:
            t_cy = float("nan")
        rows.append((label, op_name, t_np, t_cy))
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    if cy_impl is None:
        print("compiled extension not available; timing numpy only")
    print("%-22s %-8s %10s %10s %8s" % ("shape", "op", "numpy", "cython", "ratio"))
    for shape in SHAPES:
        for label, op_name, t_np, t_cy in bench_shape(*shape, args.repeats):
            ratio = t_np / t_cy if t_cy == t_cy else float("nan")
            print("%-22s %-8s %9.2fms %9.2fms %7.2fx" % (
                label, op_name, 1e3 * t_np, 1e3 * t_cy, ratio))


if __name__ == "__main__":
    main()
