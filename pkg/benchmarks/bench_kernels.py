"""Compiled loops against the numpy fallbacks for the three hot kernels.

    python3 benchmarks/bench_kernels.py [--scale 1.0] [--repeat 3]

Inputs are shaped like one 5 s block of the 35 dB scenario (Alice ~1 MHz
singles, Bob ~1 kHz) scaled by ``--scale``. Both paths are checked for
identical output before timing.
"""

import argparse
import time

import numpy as np

from entqkd import _accel, kernels


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def inputs(scale, seed=0):
    rng = np.random.default_rng(seed)
    span = int(5e12)
    na, nb = int(5e6 * scale), int(6e3 * scale)
    ta = np.sort(rng.integers(0, span, na)).astype(np.int64)
    pairs = rng.choice(na, size=nb // 2, replace=False)
    tb = np.sort(np.concatenate([ta[pairs] + 2_300_000 + rng.normal(0, 200, pairs.size).astype(np.int64),
                                 rng.integers(0, span, nb - pairs.size)])).astype(np.int64)
    ch = rng.integers(0, 2, na).astype(np.uint8)
    return ta, tb, ch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare against")

    ta, tb, ch = inputs(args.scale)
    tb_aligned = tb - 2_300_000
    dead = np.int64(50_000)
    no_tag = np.full(2, kernels.NO_TAG, dtype=np.int64)
    cases = {
        "dead_time_mask": (
            lambda: kernels._dead_time_mask_loop(ta, ch, dead, no_tag.copy()),
            lambda: kernels._dead_time_mask_numpy(ta, ch, dead, no_tag.copy())),
        "xcorr_histogram (10 ns bins, +-1.1 ms)": (
            lambda: kernels._xcorr_loop(ta, tb, np.int64(-1_100_000_000), np.int64(10_000), np.int64(220_000)),
            lambda: kernels._xcorr_numpy(ta, tb, -1_100_000_000, 10_000, 220_000)),
        "xcorr_histogram (0.5 ns bins, 200 ns)": (
            lambda: kernels._xcorr_loop(ta, tb, np.int64(2_200_000), np.int64(500), np.int64(400)),
            lambda: kernels._xcorr_numpy(ta, tb, 2_200_000, 500, 400)),
        "match_coincidences (1.5 ns)": (
            lambda: kernels._match_loop(ta, tb_aligned, np.int64(750)),
            lambda: kernels._match_numpy(ta, tb_aligned, np.int64(750))),
    }

    print(f"alice {ta.size} tags, bob {tb.size} tags, best of {args.repeat}")
    print(f"{'kernel':42s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}")
    for name, (fast, slow) in cases.items():
        a, b = fast(), slow()  # also triggers compilation
        same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) else np.array_equal(a, b)
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        tf, ts = best_of(fast, args.repeat), best_of(slow, args.repeat)
        print(f"{name:42s} {tf:9.4f} {ts:9.4f} {ts / tf:7.1f}x")


if __name__ == "__main__":
    main()
