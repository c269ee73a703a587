"""Compare the numba and pure-numpy Monte Carlo kernels.

    python3 benchmarks/bench_kernels.py --samples 200000 --sources 3 --outcomes 12

Prints the best-of-N wall time of each path and the max abs difference.
"""

import argparse
import time

import numpy as np

from rayleigh_moments import _kernels


def _inputs(n, J, M, seed):
    rng = np.random.default_rng(seed)
    alpha = (rng.normal(size=(n, J)) + 1j * rng.normal(size=(n, J))) * 0.1
    A = rng.normal(size=(J, J)) + 1j * rng.normal(size=(J, J))
    gram = A @ A.conj().T / J + np.eye(J)
    g0 = rng.normal(size=J) + 0j
    B = rng.normal(size=(M, J, J)) + 1j * rng.normal(size=(M, J, J))
    mats = np.einsum("mij,mkj->mik", B, B.conj()) / J
    kinds = np.array([_kernels.VACUUM] + [_kernels.PLAIN] * (M - 3)
                     + [_kernels.DRESSED_K, _kernels.BUCKET], dtype=np.int64)
    counts = np.zeros(M, dtype=np.int64)
    counts[-2] = 2
    return alpha, gram, g0, mats, kinds, counts


def _best(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--sources", type=int, default=3)
    ap.add_argument("--outcomes", type=int, default=12)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    data = _inputs(args.samples, args.sources, args.outcomes, args.seed)
    pairs = [("quad_forms", _kernels.quad_forms_numpy, getattr(_kernels, "quad_forms_numba", None), data[:1] + data[3:4]),
             ("mc_functionals", _kernels.mc_functionals_numpy, getattr(_kernels, "mc_functionals_numba", None), data)]
    print(f"samples={args.samples} sources={args.sources} outcomes={args.outcomes} numba={_kernels.HAVE_NUMBA}")
    for name, f_np, f_nb, a in pairs:
        t_np, out_np = _best(f_np, a, args.repeat)
        if f_nb is None:
            print(f"{name:15s} numpy {t_np * 1e3:9.2f} ms   numba unavailable")
            continue
        f_nb(*(x[:10] if x.ndim and x.shape[0] == args.samples else x for x in a))  # compile
        t_nb, out_nb = _best(f_nb, a, args.repeat)
        diff = np.max(np.abs(out_np - out_nb))
        print(f"{name:15s} numpy {t_np * 1e3:9.2f} ms   numba {t_nb * 1e3:9.2f} ms   "
              f"speedup {t_np / t_nb:5.1f}x   max|diff| {diff:.2e}")


if __name__ == "__main__":
    main()
