"""Compare the compiled and pure-Python TV denoising kernels.

Usage::

    python benchmarks/bench_tv.py [--lengths 100 1000 10000] [--repeat 5]

Prints the best-of-``repeat`` wall time per call for each backend and
signal length, plus the speedup.  Both backends must agree to 1e-12.
"""

import argparse
import timeit

import numpy as np

from hummit import tvr
from hummit.tvr import denoise_tv


def noisy_melody(n, rng):
    steps = np.repeat(rng.integers(55, 75, n // 50 + 1), 50)[:n].astype(float)
    return steps + rng.normal(0, 0.5, n)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lengths", type=int, nargs="+", default=[100, 1000, 10000, 100000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--lam", type=float, default=0.3)
    args = ap.parse_args()

    if tvr._compiled is None:
        print("compiled kernel not built; only the Python backend is available")
    backends = ["python"] + (["cython"] if tvr._compiled is not None else [])
    rng = np.random.default_rng(0)
    print(f"{'length':>8} " + " ".join(f"{b + ' (ms)':>14}" for b in backends) + f" {'speedup':>9}")
    for n in args.lengths:
        f = noisy_melody(n, rng)
        ref = denoise_tv(f, args.lam, backend="python")
        times = {}
        for b in backends:
            np.testing.assert_allclose(denoise_tv(f, args.lam, backend=b), ref, atol=1e-12)
            number = max(1, int(2e4 // n))
            t = min(timeit.repeat(lambda: denoise_tv(f, args.lam, backend=b),
                                  number=number, repeat=args.repeat)) / number
            times[b] = t * 1e3
        speed = f"{times['python'] / times['cython']:>8.1f}x" if "cython" in times else f"{'-':>9}"
        print(f"{n:>8d} " + " ".join(f"{times[b]:>14.4f}" for b in backends) + f" {speed}")


if __name__ == "__main__":
    main()
