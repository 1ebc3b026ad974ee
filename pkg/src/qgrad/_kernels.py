"""Hot numeric kernels.

Every kernel exists twice: a loop version compiled with ``numba.njit`` and a
vectorised pure-numpy version. The public name binds to one of them at import
time. Set ``QGRAD_DISABLE_NUMBA=1`` to force the numpy path (also used when
numba is not installed). Both variants stay importable as ``<name>_nb`` and
``<name>_np`` so tests and the benchmark can compare them directly.
"""

import math
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get(
    "QGRAD_DISABLE_NUMBA", "0"
).strip().lower() not in ("1", "true", "yes", "on")
BACKEND = "numba" if USE_NUMBA else "numpy"

# dot products of unit vectors closer than this count as ties
TIE_TOL = 1e-12

STOP_NONE = 0
STOP_GRAD_NORM = 1
STOP_L_ALPHA = 2
STOP_GAP = 3


def _jit(fn):
    if NUMBA_AVAILABLE:
        return numba.njit(cache=True)(fn)
    return fn


# ---------------------------------------------------------------------------
# sign step on a box (orthant = [0, inf))


def _sign_step_loop(x, g, step, lo, hi):
    n = x.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = 1.0 if g[i] >= 0.0 else -1.0
        v = x[i] - step * s
        if v < lo[i]:
            v = lo[i]
        elif v > hi[i]:
            v = hi[i]
        out[i] = v
    return out


def sign_step_np(x, g, step, lo, hi):
    s = np.where(g >= 0.0, 1.0, -1.0)
    return np.minimum(np.maximum(x - step * s, lo), hi)


sign_step_nb = _jit(_sign_step_loop)


# ---------------------------------------------------------------------------
# lowest-index argmax of <E_i, g>


def _first_argmax_loop(E, g):
    m, n = E.shape
    dots = np.empty(m)
    best = -np.inf
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += E[i, j] * g[j]
        dots[i] = s
        if s > best:
            best = s
    for i in range(m):
        if dots[i] >= best - TIE_TOL:
            return i
    return 0


def first_argmax_np(E, g):
    dots = E @ g
    return int(np.argmax(dots >= dots.max() - TIE_TOL))


first_argmax_nb = _jit(_first_argmax_loop)


# ---------------------------------------------------------------------------
# multistart Riemannian subgradient descent of g -> max_i <E_i, g> on the sphere


def _sphere_descent_loop(E, starts, iters, step0):
    m, n = E.shape
    k = starts.shape[0]
    best_val = np.empty(k)
    best_g = np.empty((k, n))
    g = np.empty(n)
    for s in range(k):
        for j in range(n):
            g[j] = starts[s, j]
        bv = np.inf
        for it in range(iters):
            top = -np.inf
            arg = 0
            for i in range(m):
                d = 0.0
                for j in range(n):
                    d += E[i, j] * g[j]
                if d > top:
                    top = d
                    arg = i
            if top < bv:
                bv = top
                for j in range(n):
                    best_g[s, j] = g[j]
            # tangent component of the active direction
            eta = step0 / math.sqrt(it + 1.0)
            nrm = 0.0
            for j in range(n):
                g[j] = g[j] - eta * (E[arg, j] - top * g[j])
                nrm += g[j] * g[j]
            nrm = math.sqrt(nrm)
            for j in range(n):
                g[j] /= nrm
        best_val[s] = bv
    return best_val, best_g


def sphere_descent_np(E, starts, iters, step0):
    G = starts.copy()
    k = G.shape[0]
    best_val = np.full(k, np.inf)
    best_g = G.copy()
    rows = np.arange(k)
    for it in range(iters):
        dots = G @ E.T
        arg = np.argmax(dots, axis=1)
        top = dots[rows, arg]
        better = top < best_val
        best_val[better] = top[better]
        best_g[better] = G[better]
        eta = step0 / math.sqrt(it + 1.0)
        G = G - eta * (E[arg] - top[:, None] * G)
        G /= np.linalg.norm(G, axis=1, keepdims=True)
    return best_val, best_g


sphere_descent_nb = _jit(_sphere_descent_loop)


# ---------------------------------------------------------------------------
# TCP source rates q_s = clamp(u_s / lambda_s - 1, m_s, M_s)


def _tcp_rates_loop(A, x, u, lo, hi, tol):
    nl, ns = A.shape
    q = np.empty(ns)
    for s in range(ns):
        lam = 0.0
        for l in range(nl):
            if A[l, s] != 0.0:
                lam += A[l, s] * x[l]
        if lam <= tol:
            q[s] = hi[s]
        else:
            v = u[s] / lam - 1.0
            if v < lo[s]:
                v = lo[s]
            elif v > hi[s]:
                v = hi[s]
            q[s] = v
    return q


def tcp_rates_np(A, x, u, lo, hi, tol):
    lam = A.T @ x
    safe = np.where(lam > tol, lam, 1.0)
    q = np.clip(u / safe - 1.0, lo, hi)
    return np.where(lam > tol, q, hi)


tcp_rates_nb = _jit(_tcp_rates_loop)


# ---------------------------------------------------------------------------
# fused run of the quantized recursion on f(x) = 0.5 (x - c)^T H (x - c)


def _run_quadratic_loop(H, center, x0, E, use_sign, lo, hi, gamma0, power,
                        rule, eps, alpha, fstar, max_iter, record_x,
                        zero_tol, has_lalpha):
    n = x0.shape[0]
    rows = max_iter + 1
    f_out = np.empty(rows)
    gn_out = np.empty(rows)
    la_out = np.full(rows, np.nan)
    gam_out = np.empty(rows)
    X = np.empty((rows if record_x else 1, n))
    x = x0.copy()
    r = np.empty(n)
    g = np.empty(n)
    hit = -1
    count = 0
    sq = math.sqrt(n)
    for t in range(rows):
        for i in range(n):
            r[i] = x[i] - center[i]
        fv = 0.0
        gg = 0.0
        for i in range(n):
            s = 0.0
            for j in range(n):
                s += H[i, j] * r[j]
            g[i] = s
            fv += r[i] * s
            gg += s * s
        fv *= 0.5
        gn = math.sqrt(gg)
        la = np.nan
        if has_lalpha:
            acc = 0.0
            for i in range(n):
                p = x[i] - alpha * g[i]
                if p < lo[i]:
                    p = lo[i]
                elif p > hi[i]:
                    p = hi[i]
                acc += (x[i] - p) ** 2
            la = math.sqrt(acc)
        if power == 0.0:
            gam = gamma0
        else:
            gam = gamma0 / (1.0 + t) ** power
        f_out[t] = fv
        gn_out[t] = gn
        la_out[t] = la
        gam_out[t] = gam
        if record_x:
            for i in range(n):
                X[t, i] = x[i]
        count = t + 1
        if rule == STOP_GRAD_NORM and gn <= eps:
            hit = t
            break
        if rule == STOP_L_ALPHA and la <= eps:
            hit = t
            break
        if rule == STOP_GAP and fv - fstar <= eps:
            hit = t
            break
        if t == max_iter:
            break
        if gn <= zero_tol:
            continue
        if use_sign:
            step = gam / sq
            for i in range(n):
                v = x[i] - step if g[i] >= 0.0 else x[i] + step
                if v < lo[i]:
                    v = lo[i]
                elif v > hi[i]:
                    v = hi[i]
                x[i] = v
        else:
            for i in range(n):
                g[i] /= gn
            k = _first_argmax_kernel(E, g)
            for i in range(n):
                v = x[i] - gam * E[k, i]
                if v < lo[i]:
                    v = lo[i]
                elif v > hi[i]:
                    v = hi[i]
                x[i] = v
    return f_out[:count], gn_out[:count], la_out[:count], gam_out[:count], \
        X[:count] if record_x else X[:0], x, hit


def run_quadratic_np(H, center, x0, E, use_sign, lo, hi, gamma0, power,
                     rule, eps, alpha, fstar, max_iter, record_x,
                     zero_tol, has_lalpha):
    n = x0.shape[0]
    rows = max_iter + 1
    f_out = np.empty(rows)
    gn_out = np.empty(rows)
    la_out = np.full(rows, np.nan)
    gam_out = np.empty(rows)
    X = np.empty((rows if record_x else 1, n))
    x = x0.copy()
    hit = -1
    count = 0
    sq = math.sqrt(n)
    for t in range(rows):
        r = x - center
        g = H @ r
        fv = 0.5 * float(r @ g)
        gn = float(np.linalg.norm(g))
        la = np.nan
        if has_lalpha:
            la = float(np.linalg.norm(x - np.minimum(np.maximum(x - alpha * g, lo), hi)))
        gam = gamma0 if power == 0.0 else gamma0 / (1.0 + t) ** power
        f_out[t], gn_out[t], la_out[t], gam_out[t] = fv, gn, la, gam
        if record_x:
            X[t] = x
        count = t + 1
        if (rule == STOP_GRAD_NORM and gn <= eps) or \
                (rule == STOP_L_ALPHA and la <= eps) or \
                (rule == STOP_GAP and fv - fstar <= eps):
            hit = t
            break
        if t == max_iter:
            break
        if gn <= zero_tol:
            continue
        if use_sign:
            x = sign_step_np(x, g, gam / sq, lo, hi)
        else:
            d = E[first_argmax_np(E, g / gn)]
            x = np.minimum(np.maximum(x - gam * d, lo), hi)
    return (f_out[:count], gn_out[:count], la_out[:count], gam_out[:count],
            X[:count] if record_x else X[:0], x, hit)


_first_argmax_kernel = first_argmax_nb
run_quadratic_nb = _jit(_run_quadratic_loop)


if USE_NUMBA:
    sign_step = sign_step_nb
    first_argmax = first_argmax_nb
    sphere_descent = sphere_descent_nb
    tcp_rates = tcp_rates_nb
    run_quadratic = run_quadratic_nb
else:
    sign_step = sign_step_np
    first_argmax = first_argmax_np
    sphere_descent = sphere_descent_np
    tcp_rates = tcp_rates_np
    run_quadratic = run_quadratic_np
