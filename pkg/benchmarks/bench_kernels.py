"""Time the numba and numpy kernel paths side by side.

    python benchmarks/bench_kernels.py [--repeat N]

Each kernel is warmed up once (so numba compile time is excluded) and the
results of both paths are checked for equality before timing.
"""

from __future__ import annotations

import argparse
import os
import timeit

import numpy as np

from collocate import _kernels as K
from collocate.bloom import probe_hashes


def cases(rng: np.random.Generator):
    m = 1 << 24
    k = 20
    tokens = [rng.bytes(16) for _ in range(20_000)]
    h1, h2 = probe_hashes(12345, tokens)
    bits = np.zeros((m + 7) // 8, dtype=np.uint8)
    K.bloom_set_numpy(bits, h1, h2, k, m)
    probe1, probe2 = probe_hashes(999, [rng.bytes(16) for _ in range(200_000)])
    return {
        "rotation_ticks (1e6 ticks)": lambda f: f(0xDEADBEEF, 0, 1_000_000, 1 / 30),
        "bloom_set (20k tokens, k=20)": lambda f: f(np.zeros_like(bits), h1, h2, k, m),
        "bloom_test (200k probes, k=20)": lambda f: f(bits, probe1, probe2, k, m),
        "popcount (2 MiB)": lambda f: f(bits),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if not K.HAVE_NUMBA:
        print("numba is not installed; only the numpy path can run")
    print(f"active backend: {K.BACKEND} (COLLOCATE_NO_NUMBA={os.environ.get('COLLOCATE_NO_NUMBA', '')!r})")
    rng = np.random.default_rng(0)
    pairs = {
        "rotation_ticks": (K.rotation_ticks_numpy, getattr(K, "rotation_ticks_numba", None)),
        "bloom_set": (K.bloom_set_numpy, getattr(K, "bloom_set_numba", None)),
        "bloom_test": (K.bloom_test_numpy, getattr(K, "bloom_test_numba", None)),
        "popcount": (K.popcount_numpy, getattr(K, "popcount_numba", None)),
    }
    print(f"{'kernel':<34}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for label, call in cases(rng).items():
        np_fn, nb_fn = pairs[label.split()[0]]
        ref = call(np_fn)
        t_np = min(timeit.repeat(lambda: call(np_fn), number=1, repeat=args.repeat)) * 1e3
        if nb_fn is None:
            print(f"{label:<34}{t_np:>12.2f}{'-':>12}{'-':>10}")
            continue
        got = call(nb_fn)
        if ref is not None and not np.array_equal(np.asarray(ref), np.asarray(got)):
            raise SystemExit(f"{label}: numba and numpy results differ")
        t_nb = min(timeit.repeat(lambda: call(nb_fn), number=1, repeat=args.repeat)) * 1e3
        print(f"{label:<34}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
