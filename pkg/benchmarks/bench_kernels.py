"""Time the LSTM recurrence kernels: numpy loop vs compiled.

    python benchmarks/bench_kernels.py [--batch 32] [--frames 200] [--hidden 128] [--repeat 5]
"""
import argparse
import time

import numpy as np

from relabel import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--frames", type=int, default=200)
    ap.add_argument("--hidden", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    r = np.random.default_rng(0)
    B, T, H = args.batch, args.frames, args.hidden
    xproj = r.normal(size=(B, T, 4 * H))
    wh = r.normal(size=(H, 4 * H)) / np.sqrt(H)
    dhs = r.normal(size=(B, T, H))

    backends = ["python"]
    try:
        kernels.get_backend("cython")
        backends.append("cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only")

    print(f"B={B} T={T} H={H}, best of {args.repeat}")
    results = {}
    for name in backends:
        fwd, bwd = kernels.get_backend(name)
        hs, cs, gates = fwd(xproj, wh)
        tf = best_of(lambda: fwd(xproj, wh), args.repeat)
        tb = best_of(lambda: bwd(dhs, gates, cs, hs, wh), args.repeat)
        results[name] = (tf, tb, hs)
        print(f"{name:>7}: forward {tf * 1e3:8.2f} ms   backward {tb * 1e3:8.2f} ms")
    if len(results) == 2:
        (pf, pb, ph), (cf, cb, ch) = results["python"], results["cython"]
        print(f"speedup: forward x{pf / cf:.2f}, backward x{pb / cb:.2f}; "
              f"max |dh| = {np.abs(ph - ch).max():.2e}")


if __name__ == "__main__":
    main()
