"""Time the numba kernels against the numpy fallbacks.

    python benchmarks/bench_backends.py [--ions N] [--hbt-seconds T] [--repeat R]

Each workload runs once untimed (numba compilation), then best-of-R is
reported. Both backends consume the same random streams, so the script also
checks that they agree.
"""
import argparse
import time

import numpy as np

from vsiarray import _accel
from vsiarray.photonics import EmitterModel, hbt_histogram
from vsiarray.transport import helium_beam, silicon_carbide, simulate_profile


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_transport(n_ions, repeat):
    beam, target = helium_beam(30.0), silicon_carbide()
    res = {}
    for backend in ("numba", "numpy"):
        res[backend] = best_of(lambda: simulate_profile(beam, target, n_ions, 7, backend=backend), repeat)
    dz = np.max(np.abs(res["numba"][1].stop_positions - res["numpy"][1].stop_positions))
    return {b: t for b, (t, _) in res.items()}, f"max stop-position difference {dz:.1e} nm"


def bench_hbt(seconds, repeat):
    em = EmitterModel()
    res = {}
    for backend in ("numba", "numpy"):
        res[backend] = best_of(lambda: hbt_histogram(1, 6.0, 2.0, em, seconds, 7, 1.0, 500.0, backend=backend), repeat)
    same = np.array_equal(res["numba"][1].counts, res["numpy"][1].counts)
    return {b: t for b, (t, _) in res.items()}, f"identical coincidence counts: {same}"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--ions", type=int, default=2000, help="transport histories")
    parser.add_argument("--hbt-seconds", type=float, default=200.0, help="simulated HBT duration")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if not _accel.USE_NUMBA:
        parser.error("numba is disabled (VSIARRAY_DISABLE_NUMBA); nothing to compare")

    rows = [
        (f"transport, {args.ions} ions", *bench_transport(args.ions, args.repeat)),
        (f"hbt histogram, {args.hbt_seconds:g} s at 8 kcps", *bench_hbt(args.hbt_seconds, args.repeat)),
    ]
    print(f"{'workload':36s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}")
    for name, t, note in rows:
        print(f"{name:36s} {t['numba']:9.3f} {t['numpy']:9.3f} {t['numpy'] / t['numba']:7.1f}x  {note}")


if __name__ == "__main__":
    main()
