"""Timing of the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--bodies 3 5 10] [--points 256] [--repeat 20]

The first numba call of each kernel (compilation or cache load) is excluded.
"""

import argparse
import time

import numpy as np

from nbodyhj import _kernels


def _best(fn, repeat):
    fn()  # warm-up / compile
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _cases(n, n_pts, rng):
    d = 2
    P = rng.standard_normal((n_pts, n, d)) * 3.0
    V = rng.standard_normal((n_pts, n, d))
    m = rng.uniform(0.5, 2.0, n)
    return P, V, m


def _kepler(n):
    # bodies on a slowly expanding ring
    ang = 2 * np.pi * np.arange(n) / n
    x = np.column_stack([np.cos(ang), np.sin(ang)]) * n
    v = np.column_stack([-np.sin(ang), np.cos(ang)]) * 0.5 + x * 0.3 / n
    y0 = np.concatenate([x.ravel(), v.ravel()])
    return y0, np.ones(n)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--bodies", type=int, nargs="+", default=[3, 5, 10])
    ap.add_argument("--points", type=int, default=256, help="quadrature points per batch")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    if _kernels.numba_impl is None:
        print("numba is not installed; nothing to compare")
        return
    impls = {"numpy": _kernels.numpy_impl, "numba": _kernels.numba_impl}
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14}{'N':>4}  {'numpy [ms]':>11}  {'numba [ms]':>11}  {'speed-up':>8}")
    for n in args.bodies:
        P, V, m = _cases(n, args.points, rng)
        y0, mm = _kepler(n)
        t_out = np.geomspace(1.0, 1e2, 20)
        jobs = {
            "pot_grad": lambda k: k.pot_grad(P, m),
            "pot_diff_grad": lambda k: k.pot_diff_grad(P, 1e-3 * V, m),
            "hess_apply": lambda k: k.hess_apply(P, m, V),
            "hess_blocks": lambda k: k.hess_blocks(P, m),
            "dopri": lambda k: k.dopri(y0, 1.0, t_out, mm, n, 2, 1e-10, 1e-12, 1e-8, 1_000_000),
        }
        for name, job in jobs.items():
            times = {key: _best(lambda k=k: job(k), args.repeat) for key, k in impls.items()}
            ratio = times["numpy"] / times["numba"]
            print(f"{name:<14}{n:>4}  {1e3 * times['numpy']:>11.3f}  {1e3 * times['numba']:>11.3f}  {ratio:>8.1f}")


if __name__ == "__main__":
    main()
