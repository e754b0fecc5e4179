"""Compare the numba and numpy kernel paths.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--threads 1]

Both paths are called directly, so the ``COVR_NO_NUMBA`` flag does not
matter here. Each row reports the best of ``--repeat`` runs after one
warm-up call (which also triggers numba compilation).
"""
import argparse
import time

import numpy as np

from covr import _kernels as K


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rng):
    store = rng.standard_normal((20_000, 64))
    queries = rng.standard_normal((32, 64))
    targets = rng.integers(0, 20_000, 32)
    sim = np.tanh(rng.standard_normal((64, 64)))
    n = 65_536 * 32
    p, g = rng.standard_normal(n), rng.standard_normal(n)
    m, v = np.zeros(n), np.zeros(n)
    blob = rng.integers(0, 256, 4_000_000, dtype=np.uint8)
    adam = (0.001, 0.9, 0.999, 1e-8, 0.1, 0.001)
    return [
        ("topk  20000x64, 32 queries, k=50",
         lambda: K.topk_numba(store, queries, 50), lambda: K.topk_numpy(store, queries, 50)),
        ("target_ranks  20000x64, 32 queries",
         lambda: K.target_ranks_numba(store, queries, targets),
         lambda: K.target_ranks_numpy(store, queries, targets)),
        ("hn_weights  64x64",
         lambda: K.hn_weights_numba(sim, 0.5, 0.07), lambda: K.hn_weights_numpy(sim, 0.5, 0.07)),
        ("adam  2.1M parameters",
         lambda: K.adam_update_numba(p, g, m, v, *adam), lambda: K.adam_update_numpy(p, g, m, v, *adam)),
        ("fnv1a64  4 MB",
         lambda: K.fnv1a64_numba(blob), lambda: K.fnv1a64_python(blob[:400_000].tobytes())),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    K.set_threads(args.threads)
    print(f"{'kernel':40s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, slow in cases(np.random.default_rng(0)):
        t_fast = best_of(fast, args.repeat)
        t_slow = best_of(slow, args.repeat)
        if name.startswith("fnv1a64"):
            t_slow *= 10  # the pure-python digest runs on a tenth of the bytes
        print(f"{name:40s} {t_fast * 1e3:10.2f} {t_slow * 1e3:10.2f} {t_slow / t_fast:7.1f}x")


if __name__ == "__main__":
    main()
