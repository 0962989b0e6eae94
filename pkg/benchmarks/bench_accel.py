"""Time the numba and pure-numpy kernel paths against each other.

Both backends consume identical random numbers, so the script also checks
that they produce identical results. Usage::

    python3 benchmarks/bench_accel.py [--repeats 3] [--out bench_accel.csv]

Setting SMC2SWITCH_DISABLE_NUMBA=1 removes the numba rows.
"""

import argparse
import csv
import sys
import time

import numpy as np

from smc2switch import BACKEND, EngineConfig, get_model, run
from smc2switch._accel import inverse_cdf_rows, resample_rows
from smc2switch.filters import backward_sample, bootstrap_pf


def _best(fn, repeats):
    fn()  # warm-up, includes numba compilation
    times = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    bm = get_model("bm")
    theta = np.asarray(bm.true_theta)
    series, _ = bm.simulate(theta, 100, np.random.default_rng(0))
    batch = np.tile(theta, (200, 1))
    rng = np.random.default_rng(1)
    W = rng.random((2000, 64))
    U = rng.random((2000, 64))
    logW = np.log(W / W.sum(axis=1, keepdims=True))

    def pf(backend):
        return bootstrap_pf(bm, batch, series, 200, np.random.default_rng(2), history=False,
                            backend=backend).loglik

    def pf_bs(backend):
        rng = np.random.default_rng(3)
        out = bootstrap_pf(bm, batch[:50], series, 200, rng, backend=backend)
        return backward_sample(out, bm, batch[:50], series, rng, backend=backend).x

    def smc2(backend):
        cfg = EngineConfig(n_theta=50, nx_pmmh=50, policy="always", r=0.2)
        res = run(bm, series.head(20), cfg, np.random.default_rng(4), backend)
        return np.append(res.theta.ravel(), res.metrics.pfc)

    return {
        "inverse_cdf 2000x64": lambda b: inverse_cdf_rows(W, U, b),
        "resample_rows 2000x64": lambda b: resample_rows(logW, U, 64.0, backend=b)[0],
        "bootstrap_pf B=200 N=200 T=100": pf,
        "pf+backward B=50 N=200 T=100": pf_bs,
        "SMC2 DA always r=0.2 T=20": smc2,
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="optional CSV of the timings")
    args = p.parse_args(argv)
    backends = ["numpy"] + (["numba"] if BACKEND == "numba" else [])
    rows = []
    for name, fn in cases().items():
        results = {b: fn(b) for b in backends}
        same = all(np.array_equal(results["numpy"], results[b]) for b in backends)
        times = {b: _best(lambda: fn(b), args.repeats) for b in backends}
        speedup = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        rows.append([name, times["numpy"], times.get("numba", float("nan")), speedup, same])
        print(f"{name:34s} numpy {times['numpy'] * 1e3:9.2f} ms  "
              f"numba {times.get('numba', float('nan')) * 1e3:9.2f} ms  "
              f"speedup {speedup:5.2f}  identical={same}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "numpy_s", "numba_s", "speedup", "identical"])
            w.writerows(rows)
    return 0 if all(r[-1] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
