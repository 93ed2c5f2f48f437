"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_backends.py [--repeat 15] [--json out.json]

Each kernel is called through its dispatching wrapper with ``use_jit`` forced
on or off, so both forms run in one process. Times are medians in
milliseconds, single-threaded. The first numba call (compilation or cache
load) is excluded by a warmup call.
"""
import argparse
import json
import statistics
import sys
import time

import numpy as np
from threadpoolctl import threadpool_limits

from compresskit import _kernels
from compresskit._accel import HAVE_NUMBA
from compresskit.lowrank import full_svd
from compresskit.microinfer import conv_output_hw


def median_ms(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return 1e3 * statistics.median(times)


def cases(rng):
    for m, n in [(27, 16), (144, 64), (576, 128), (128, 96)]:
        a = rng.standard_normal((m, n))
        yield f"jacobi svd {m}x{n}", lambda jit, a=a: full_svd(a, use_jit=jit)
    for c, hw, k, s, p in [(3, 224, 3, 1, 1), (64, 56, 3, 1, 1), (128, 28, 3, 2, 1), (256, 14, 1, 1, 0)]:
        x = rng.standard_normal((c, hw, hw)).astype(np.float32)
        oh, ow = conv_output_hw(hw, hw, k, s, p)
        yield (f"im2col {c}x{hw}x{hw} k{k} s{s} p{p}",
               lambda jit, x=x, k=k, s=s, p=p, oh=oh, ow=ow:
               _kernels.im2col(x, k, k, s, p, oh, ow, use_jit=jit))
    for c, hw in [(16, 208), (64, 52), (256, 13)]:
        x = rng.standard_normal((c, hw, hw)).astype(np.float32)
        o = hw // 2
        yield f"maxpool 2x2 {c}x{hw}x{hw}", lambda jit, x=x, o=o: _kernels.maxpool(x, 2, 2, o, o, use_jit=jit)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="write results here as well")
    args = ap.parse_args(argv)
    if not HAVE_NUMBA:
        print("numba is not installed; nothing to compare", file=sys.stderr)
        return 1
    rows = []
    with threadpool_limits(limits=1):
        for name, fn in cases(np.random.default_rng(args.seed)):
            t_jit = median_ms(lambda: fn(True), args.repeat)
            t_np = median_ms(lambda: fn(False), args.repeat)
            rows.append({"kernel": name, "numba_ms": t_jit, "numpy_ms": t_np,
                         "numpy_over_numba": t_np / t_jit})
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel'.ljust(width)}  {'numba ms':>9}  {'numpy ms':>9}  {'numpy/numba':>11}")
    for r in rows:
        print(f"{r['kernel'].ljust(width)}  {r['numba_ms']:9.3f}  {r['numpy_ms']:9.3f}  "
              f"{r['numpy_over_numba']:11.2f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
