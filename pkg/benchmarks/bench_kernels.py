"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json]

Each kernel is run on the same seeded inputs under every available backend;
outputs are checked for agreement before timings are reported.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import timeit

import numpy as np

from treecat import _kernels
from treecat.crf import DEFAULT_EDGES

log = logging.getLogger("bench_kernels")


def edt_case(rng):
    mask = rng.random((512, 512)) < 0.002
    return (mask,), {}


def kernel_case(rng):
    q = rng.uniform(0, 2000, (20_000, 2))
    p = rng.uniform(0, 2000, (400, 2))
    return (q[:, 0], q[:, 1], p[:, 0], p[:, 1], rng.normal(1, 1, 400), 25.0, -2.0), {}


def greedy_case(rng, nms=False):
    n = 1500
    xy = rng.uniform(0, 600, (n, 2))
    static = rng.normal(1.0, 2.0, n)
    weights = np.array([-6, -5, -4, -3, -1, 0.5, 0, -1, -2], float)
    args = (xy, static, np.ones(n, bool), np.asarray(DEFAULT_EDGES, float), weights, 1.0, nms, 4.0)
    return args, {}


CASES = {
    "edt_squared 512x512": ("edt_squared", edt_case),
    "kernel_max 20k x 400": ("kernel_max", kernel_case),
    "greedy_select 1500 learned": ("greedy_select", greedy_case),
    "greedy_select 1500 nms": ("greedy_select", lambda rng: greedy_case(rng, nms=True)),
}


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.allclose(np.asarray(a, float), np.asarray(b, float), rtol=1e-12, atol=1e-12, equal_nan=True)


def run(repeat: int) -> dict:
    backends = _kernels.available_backends()
    if "cython" not in backends:
        log.warning("compiled kernels unavailable; timing the fallback only")
    results = {}
    for label, (name, make) in CASES.items():
        args, kw = make(np.random.default_rng(0))
        outs, times = {}, {}
        for bname, mod in backends.items():
            fn = getattr(mod, name)
            outs[bname] = fn(*args, **kw)
            times[bname] = min(timeit.repeat(lambda: fn(*args, **kw), number=1, repeat=repeat))
        ref = outs["python"]
        agree = all(_same(ref, o) for o in outs.values())
        row = {"seconds": times, "agree": agree}
        if "cython" in times:
            row["speedup"] = times["python"] / times["cython"]
        results[label] = row
    return results


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true", help="print results as JSON")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    results = run(args.repeat)
    if args.json:
        json.dump(results, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        for label, row in results.items():
            t = row["seconds"]
            line = f"{label:30s} python {t['python'] * 1e3:9.2f} ms"
            if "cython" in t:
                line += f"   cython {t['cython'] * 1e3:9.2f} ms   x{row['speedup']:.1f}"
            print(line + ("" if row["agree"] else "   MISMATCH"))
    return 0 if all(r["agree"] for r in results.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
