"""Time the compiled kernels against their numpy twins.

Run with ``python3 benchmarks/bench_kernels.py``. Each pair is first checked
for agreement, then timed with ``timeit`` after a warm-up call so numba
compilation is excluded.
"""

import argparse
import timeit

import numpy as np

from qgrad import _kernels as K
from qgrad.problems import generate_tcp, make_rng, random_quadratic
from qgrad.quantization import construct_set


def cases(rng):
    n = 100
    x, g = rng.random(n), rng.normal(size=n)
    lo, hi = np.zeros(n), np.full(n, np.inf)
    yield "sign_step N=100", (x, g, 0.01, lo, hi), K.sign_step_nb, K.sign_step_np

    E = construct_set("sign", 10).elements
    yield "first_argmax 1024x10", (E, rng.normal(size=10)), K.first_argmax_nb, K.first_argmax_np

    E = construct_set("normal_basis", 6).elements
    starts = rng.normal(size=(64, 6))
    starts /= np.linalg.norm(starts, axis=1, keepdims=True)
    yield "sphere_descent 64x300", (E, starts, 300, 0.3), K.sphere_descent_nb, K.sphere_descent_np

    net = generate_tcp(1)
    A = np.ascontiguousarray(net.A)
    xp = rng.uniform(0, 40, net.n_links)
    yield "tcp_rates 100x20", (A, xp, net.u, net.lo, net.hi, 1e-12), K.tcp_rates_nb, K.tcp_rates_np

    q = random_quadratic(2, 10)
    D = construct_set("minimal", 10)
    args = (q.hessian, q.center, np.zeros(10), D.elements, False, np.full(10, -np.inf),
            np.full(10, np.inf), 0.01, 0.0, K.STOP_NONE, 0.0, 1.0, 0.0, 2000, False, 1e-12, False)
    yield "run_quadratic N=10 T=2000", args, K.run_quadratic_nb, K.run_quadratic_np


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float), atol=1e-9, equal_nan=True)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not K.NUMBA_AVAILABLE:
        print("numba is not installed; nothing to compare")
        return 1
    rng = make_rng(args.seed)
    print(f"{'kernel':<28}{'numba [us]':>12}{'numpy [us]':>12}{'speedup':>9}  agree")
    for name, a, nb, npf in cases(rng):
        agree = _same(nb(*a), npf(*a))
        number = max(1, int(0.2 / max(timeit.timeit(lambda: npf(*a), number=1), 1e-6)))
        t_nb = min(timeit.repeat(lambda: nb(*a), number=number, repeat=args.repeat)) / number
        t_np = min(timeit.repeat(lambda: npf(*a), number=number, repeat=args.repeat)) / number
        print(f"{name:<28}{t_nb * 1e6:>12.1f}{t_np * 1e6:>12.1f}{t_np / t_nb:>8.1f}x  {agree}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
