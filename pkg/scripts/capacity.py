"""One GEM iteration at the scale of the original corpus (13,000 hashtags,
67,000 dictionary words, K = 10), reporting time and peak memory.

Usage: python3 scripts/capacity.py [--words 200] [--geotags 20]
"""
import argparse
import logging
import resource
import time
import tracemalloc

from mmevents import FitConfig, SyntheticSpec, fit, generate_synthetic


def run(P=13000, D=67000, K=10, M=200, N=20, seed=0):
    t = time.perf_counter()
    data, _ = generate_synthetic(SyntheticSpec(K=K, P=P, D=D, M=M, N=N, min_angle=10.0,
                                               keep_raw=False, seed=seed))
    t_gen = time.perf_counter() - t
    tracemalloc.start()
    t = time.perf_counter()
    state, trace = fit(data, FitConfig(K=K, max_iters=1, seed=seed))
    t_fit = time.perf_counter() - t
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    rss = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024
    return dict(generate_s=t_gen, iteration_s=t_fit, fit_peak_bytes=peak,
                max_rss_bytes=rss, iterations=trace.n_iter, nnz=data.counts.nnz)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--words", type=int, default=200)
    ap.add_argument("--geotags", type=int, default=20)
    a = ap.parse_args()
    logging.getLogger("mmevents").setLevel(logging.ERROR)
    r = run(M=a.words, N=a.geotags)
    for k, v in r.items():
        print(f"{k}: {v / 2**30:.3f} GiB" if k.endswith("bytes") else f"{k}: {v}")


if __name__ == "__main__":
    main()
