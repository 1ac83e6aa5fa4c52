"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20]

Both versions run on identical inputs; the script also checks that the
outputs match bit for bit before reporting timings.
"""

import argparse
import time

import numpy as np

from rollnet import _accel, kernels


def _time(fn, args, repeat):
    fn(*args)  # warm up (numba compiles on first call)
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    n, D = 1200, 784
    values = np.abs(rng.standard_normal(n))
    grads = rng.standard_normal((n, D)) * 0.1
    slopes = np.concatenate([grads.T, -grads.T])
    yield "bisect_margins (2D=1568 dirs, 1200 constraints)", \
        kernels.bisect_margins_numpy, getattr(kernels, "_bisect_margins_numba", None), \
        (values, slopes, 2.0 ** 60, 1e-7)
    z = rng.standard_normal(n)
    g = np.abs(rng.standard_normal(n))
    yield "min_ratio (1200 neurons)", kernels.min_ratio_numpy, \
        getattr(kernels, "_min_ratio_numba", None), (z, g)
    parents = rng.uniform(-1, 1, size=(1200, D))
    m = 3600
    yield "crossover_project (3600 children, D=784)", kernels.crossover_project_numpy, \
        getattr(kernels, "_crossover_project_numba", None), \
        (parents, rng.integers(0, 1200, m), rng.integers(0, 1200, m),
         rng.uniform(-0.25, 1.25, m), np.full(D, -0.5), np.full(D, 0.5))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"numba available: {_accel.NUMBA_AVAILABLE}  dispatch backend: {_accel.backend()}")
    for name, np_fn, nb_fn, fargs in cases(rng):
        t_np = _time(np_fn, fargs, args.repeat)
        if nb_fn is None or not _accel.NUMBA_AVAILABLE:
            print(f"{name:50s} numpy {t_np * 1e3:9.3f} ms   numba   n/a")
            continue
        a, b = np_fn(*fargs), nb_fn(*fargs)
        same = all(np.asarray(u).tobytes() == np.asarray(v).tobytes()
                   for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)))
        t_nb = _time(nb_fn, fargs, args.repeat)
        print(f"{name:50s} numpy {t_np * 1e3:9.3f} ms   numba {t_nb * 1e3:9.3f} ms   "
              f"speedup {t_np / t_nb:6.2f}x   identical={same}")


if __name__ == "__main__":
    main()
