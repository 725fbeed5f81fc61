"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 7] [--size 480x640]

Each kernel is run on identical inputs under every available backend; the
outputs are checked for bitwise equality before any timing is reported.
"""

import argparse
import json
import sys
import time

import numpy as np

from mirage_eval import kernels


def star(rng, cx, cy, r0, r1, n):
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(r0, r1, n)
    return np.column_stack([cx + rad * np.cos(ang), cy + rad * np.sin(ang)])


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def cases(h, w, seed=0):
    rng = np.random.default_rng(seed)
    poly = star(rng, w / 2, h / 2, min(h, w) * 0.1, min(h, w) * 0.45, 24)
    vals = rng.normal(size=(h, w))
    ring = np.zeros((h, w), dtype=bool)
    ring[h // 4:3 * h // 4, w // 4:3 * w // 4] = True
    ring[h // 4 + 8:3 * h // 4 - 8, w // 4 + 8:3 * w // 4 - 8] = False
    return {
        "fill_polygon": lambda: kernels.fill_polygon(poly, w, h),
        "masked_box_mean r=2": lambda: kernels.masked_box_mean(vals, ring, 2),
        "masked_box_mean r=5": lambda: kernels.masked_box_mean(vals, ring, 5),
    }


def run(h, w, repeat):
    backends = kernels.available_backends()
    results = {}
    previous = kernels.BACKEND
    try:
        for b in backends:
            kernels.use_backend(b)
            for name, fn in cases(h, w).items():
                results.setdefault(name, {})[b] = best_of(fn, repeat)
    finally:
        kernels.use_backend(previous)
    rows = []
    for name, per in results.items():
        outs = [o for _, o in per.values()]
        same = all(np.array_equal(outs[0], o, equal_nan=True) for o in outs[1:])
        row = {"kernel": name, "identical": same}
        row.update({f"{b}_ms": t * 1e3 for b, (t, _) in per.items()})
        if "cython" in per:
            row["speedup"] = per["python"][0] / per["cython"][0]
        rows.append(row)
    return backends, rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--size", default="480x640", help="HxW of the test frame")
    ap.add_argument("--json", action="store_true", help="print rows as JSON")
    args = ap.parse_args(argv)
    h, w = (int(v) for v in args.size.lower().split("x"))
    backends, rows = run(h, w, args.repeat)
    if args.json:
        print(json.dumps(rows, indent=2))
    else:
        print(f"backends: {', '.join(backends)}; frame {h}x{w}; best of {args.repeat}")
        if "cython" not in backends:
            print("compiled core not built; only the fallback was timed")
        for r in rows:
            times = "  ".join(f"{b} {r[f'{b}_ms']:9.3f} ms" for b in backends)
            extra = f"  x{r['speedup']:.1f}" if "speedup" in r else ""
            print(f"{r['kernel']:<22} {times}{extra}  {'identical' if r['identical'] else 'MISMATCH'}")
    return 0 if all(r["identical"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
