"""Per-iteration wall time when K, P or D is doubled around a baseline.

Usage: python3 scripts/scaling.py [--iters 3] [--csv out.csv]
"""
import argparse
import csv
import time

import logging

import numpy as np

from mmevents import FitConfig, SyntheticSpec, fit, generate_synthetic

BASE = dict(K=5, P=2000, D=5000, M=100, N=20)


def iteration_time(K, P, D, M, N, iters=3, seed=0):
    data, _ = generate_synthetic(SyntheticSpec(K=K, P=P, D=D, M=M, N=N, min_angle=20.0,
                                               keep_raw=False, seed=seed))
    # rel_tol tiny so that exactly `iters` sweeps run
    _, trace = fit(data, FitConfig(K=K, max_iters=iters, rel_tol=1e-300, seed=seed))
    return float(np.median([sum(t.values()) for t in trace.timings]))


def scaling_ratios(base=BASE, iters=3):
    t0 = iteration_time(**base, iters=iters)
    out = {"base": t0}
    for key in ("K", "P", "D"):
        cfg = dict(base, **{key: 2 * base[key]})
        out[key] = iteration_time(**cfg, iters=iters) / t0
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--iters", type=int, default=3)
    ap.add_argument("--csv")
    a = ap.parse_args()
    logging.getLogger("mmevents").setLevel(logging.ERROR)
    start = time.perf_counter()
    r = scaling_ratios(iters=a.iters)
    print(f"baseline {BASE}: {r['base']:.3f} s per iteration")
    for key in ("K", "P", "D"):
        print(f"t(2{key}) / t({key}) = {r[key]:.3f}")
    print(f"total {time.perf_counter() - start:.1f} s")
    if a.csv:
        with open(a.csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["quantity", "value"])
            for k, v in r.items():
                w.writerow([k, v])


if __name__ == "__main__":
    main()
