"""Compare the numba and numpy backends of the compiled kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--sizes 1000,10000,100000] [--repeat 5] [--json out.json]

For every kernel and stack size the best wall time over ``--repeat`` runs is
reported for each backend, after one warm-up call (which also triggers numba
compilation), together with the maximum relative difference between the two
results.  Set ``TORSIONLAB_NO_NUMBA=1`` to check that the library default
falls back to numpy; this script always times both paths explicitly.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from torsionlab import _accel, _kernels
from torsionlab.geometry import random_sl
from torsionlab.orbital import unipotent_gl3


def _cases(size: int, rng: np.random.Generator):
    sl3 = random_sl(3, rng, size)
    near = unipotent_gl3(*rng.normal(scale=0.5, size=(3, size)))
    X = rng.normal(size=(size, 3))
    exps = np.array([[2, 0, 0], [1, 1, 1], [0, 2, 2], [4, 0, 0], [0, 0, 3]])
    coeffs = np.array([1.0, -2.0, 0.5, 0.25, 3.0])
    return {
        "r2_batch[SL3 random]": lambda: _kernels.r2_batch(sl3),
        "r2_batch[SL3 unipotent]": lambda: _kernels.r2_batch(near),
        "polar_batch[SL3 random]": lambda: _kernels.polar_batch(sl3)[0],
        "monomials[5 terms, dim 3]": lambda: _kernels.monomials(X, exps, coeffs),
    }


def _best_time(fn, repeat: int) -> tuple[float, np.ndarray]:
    out = fn()
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, np.asarray(out)


def run(sizes, repeat: int, seed: int = 0) -> list[dict]:
    backends = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])
    rows = []
    saved = _accel._override
    try:
        for size in sizes:
            cases = _cases(size, np.random.default_rng(seed))
            for name, fn in cases.items():
                timings, results = {}, {}
                for b in backends:
                    _accel.set_backend(b)
                    timings[b], results[b] = _best_time(fn, repeat)
                row = {"kernel": name, "size": size, **{f"{b}_s": timings[b] for b in backends}}
                if "numba" in results:
                    ref = results["numpy"]
                    diff = np.abs(results["numba"] - ref) / np.maximum(np.abs(ref), 1.0)
                    row["max_rel_diff"] = float(diff.max())
                    row["speedup"] = timings["numpy"] / timings["numba"]
                rows.append(row)
    finally:
        _accel.set_backend(saved)
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", default="1000,10000,100000")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", default=None, help="also write the rows as JSON")
    args = parser.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = run(sizes, args.repeat, args.seed)
    print(f"library default backend: {_accel.backend()}")
    header = f"{'kernel':<28}{'size':>8}{'numpy [ms]':>13}{'numba [ms]':>13}{'speedup':>9}{'max rel diff':>14}"
    print(header)
    print("-" * len(header))
    for r in rows:
        nb = f"{1e3 * r['numba_s']:13.3f}" if "numba_s" in r else f"{'n/a':>13}"
        sp = f"{r['speedup']:9.2f}" if "speedup" in r else f"{'':>9}"
        dd = f"{r['max_rel_diff']:14.2e}" if "max_rel_diff" in r else ""
        print(f"{r['kernel']:<28}{r['size']:>8}{1e3 * r['numpy_s']:13.3f}{nb}{sp}{dd}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
