"""Benchmark the NCC search kernel: numba JIT build vs pure-numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 64,96,128 --repeats 20

The numpy path is always importable; the JIT path is skipped with a notice
when numba is not installed or SKYTRACK_NUMBA=0 is set.
"""
import argparse
import timeit

import numpy as np

from skytrack.kernels import USING_NUMBA, ncc_search, ncc_search_numpy


def _case(window_side, rng):
    template_side = window_side // 2
    window = rng.uniform(0, 255, size=(window_side, window_side))
    template = rng.uniform(0, 255, size=(template_side, template_side))
    return window, template


def _best_of(fn, args, repeats):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeats))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="48,64,96,128",
                        help="comma-separated window sides (template is half)")
    parser.add_argument("--repeats", type=int, default=10,
                        help="timed repetitions per case; best is reported")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(args.seed)

    header = f"{'window':>8} {'template':>9} {'numpy ms':>10}"
    if USING_NUMBA:
        header += f" {'numba ms':>10} {'speedup':>8}"
    else:
        print("numba path unavailable (not installed or SKYTRACK_NUMBA=0); "
              "timing the numpy fallback only")
    print(header)

    for side in sizes:
        window, template = _case(side, rng)
        if USING_NUMBA:
            # First call pays compilation; exclude it from timing.
            jit_dy, jit_dx, jit_score = ncc_search(window, template)
            np_dy, np_dx, np_score = ncc_search_numpy(window, template)
            assert (jit_dy, jit_dx) == (np_dy, np_dx)
            assert abs(jit_score - np_score) < 1e-9
        t_numpy = _best_of(ncc_search_numpy, (window, template), args.repeats)
        row = f"{side:>8} {side // 2:>9} {t_numpy * 1e3:>10.3f}"
        if USING_NUMBA:
            t_jit = _best_of(ncc_search, (window, template), args.repeats)
            row += f" {t_jit * 1e3:>10.3f} {t_numpy / t_jit:>7.1f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
