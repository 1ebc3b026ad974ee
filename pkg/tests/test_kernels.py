import os
import subprocess
import sys

import numpy as np
import pytest

from qgrad import _kernels as K
from qgrad.problems import make_rng
from qgrad.quantization import construct_set

pytestmark = pytest.mark.skipif(not K.NUMBA_AVAILABLE, reason="numba not installed")


def test_sign_step_parity():
    rng = make_rng(0)
    for _ in range(50):
        n = int(rng.integers(1, 30))
        x, g = rng.normal(size=n), rng.normal(size=n)
        g[rng.random(n) < 0.2] = 0.0
        lo, hi = np.full(n, -0.5), np.full(n, 0.7)
        assert np.array_equal(K.sign_step_nb(x, g, 0.3, lo, hi), K.sign_step_np(x, g, 0.3, lo, hi))


def test_first_argmax_parity_with_ties():
    E = construct_set("circular", n=4).elements
    for g in ([1.0, 1.0], [0.0, 1.0], [-1.0, -1.0], [1.0, -1.0]):
        g = np.array(g) / np.linalg.norm(g)
        assert K.first_argmax_nb(E, g) == K.first_argmax_np(E, g)
    assert K.first_argmax_nb(E, np.array([1.0, 1.0]) / np.sqrt(2)) == 0


def test_tcp_rates_parity():
    rng = make_rng(1)
    A = (rng.random((30, 8)) < 0.5).astype(float)
    u, lo, hi = np.full(8, 1000.0), np.zeros(8), np.ones(8)
    for _ in range(20):
        x = rng.uniform(0, 60, 30) * (rng.random(30) < 0.8)
        assert np.allclose(K.tcp_rates_nb(A, x, u, lo, hi, 1e-12), K.tcp_rates_np(A, x, u, lo, hi, 1e-12),
                           rtol=1e-14, atol=0)


def test_sphere_descent_parity():
    E = construct_set("minimal", 4).elements
    S = make_rng(2).normal(size=(8, 4))
    S /= np.linalg.norm(S, axis=1, keepdims=True)
    v1, g1 = K.sphere_descent_nb(E, S, 200, 0.3)
    v2, g2 = K.sphere_descent_np(E, S, 200, 0.3)
    assert np.allclose(v1, v2, atol=1e-12) and np.allclose(g1, g2, atol=1e-12)


@pytest.mark.parametrize("use_sign", [False, True])
def test_run_quadratic_parity(use_sign):
    rng = make_rng(3)
    n = 5
    Q = rng.normal(size=(n, n))
    H = Q @ Q.T + np.eye(n)
    c = rng.normal(size=n)
    E = construct_set("normal_basis", n).elements
    lo, hi = np.zeros(n), np.full(n, np.inf)
    args = (H, c, np.ones(n), E, use_sign, lo, hi, 0.2, 0.6, K.STOP_L_ALPHA, 1e-3, 1.0, 0.0, 3000,
            True, 1e-12, True)
    a, b = K.run_quadratic_nb(*args), K.run_quadratic_np(*args)
    assert a[-1] == b[-1]
    for u, v in zip(a[:-1], b[:-1]):
        assert np.allclose(u, v, atol=1e-12, equal_nan=True)


def test_env_flag_selects_numpy():
    code = "from qgrad import _kernels as K; print(K.BACKEND, K.run_quadratic is K.run_quadratic_np)"
    env = dict(os.environ, QGRAD_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]


def test_default_backend_is_numba():
    if os.environ.get("QGRAD_DISABLE_NUMBA", "0") not in ("1", "true", "yes", "on"):
        assert K.BACKEND == "numba"
