"""Time the numba kernels against their numpy fallbacks.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.  Each kernel
is called once before timing so numba compilation is excluded.
"""

import argparse
import timeit

import numpy as np

from ducjcas import kernels


def _basis(rng, n, k):
    m = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, _ = np.linalg.qr(m)
    return np.ascontiguousarray(q[:, k:])


def cases(rng):
    # desk-scale shapes: 8x8 array on a 64x64 angle grid, 256-point range grid
    p, q = np.meshgrid(np.arange(8.0), np.arange(8.0), indexing="ij")
    p, q = p.ravel(), q.ravel()
    angle_basis = _basis(rng, 64, 1)
    phis = np.linspace(-np.pi, np.pi, 64)
    thetas = np.linspace(0, np.pi / 2, 64)
    line_basis = _basis(rng, 64, 2)
    coef = -2 * np.pi * 480e3 * np.arange(64) / 3e8
    xs = np.linspace(0, 624.0, 256, endpoint=False)
    s2 = rng.random((64, 64))
    s1 = rng.random(256)
    amps = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    w = rng.uniform(-3, 3, (2, 3))
    return {
        "upa_spectrum": (p, q, np.pi, phis, thetas, angle_basis),
        "line_spectrum": (coef, xs, line_basis),
        "local_maxima_2d": (s2,),
        "local_maxima_1d": (s1,),
        "path_grid": (amps, w[0], w[1], 64, 32),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':18s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, call_args in cases(rng).items():
        fn_np = getattr(kernels, f"{name}_numpy")
        fn_nb = getattr(kernels, f"{name}_numba")
        a, b = fn_np(*call_args), fn_nb(*call_args)  # warm-up, compile
        if name.startswith("local_maxima"):
            assert sorted(map(tuple, np.atleast_2d(a.T).T)) == sorted(map(tuple, np.atleast_2d(b.T).T))
        else:
            assert np.allclose(a, b)
        t_np = min(timeit.repeat(lambda: fn_np(*call_args), number=1, repeat=args.repeat)) * 1e6
        t_nb = min(timeit.repeat(lambda: fn_nb(*call_args), number=1, repeat=args.repeat)) * 1e6
        print(f"{name:18s} {t_np:10.1f} {t_nb:10.1f} {t_np / t_nb:8.2f}")
    print(f"active backend: {kernels.BACKEND}")


if __name__ == "__main__":
    main()
