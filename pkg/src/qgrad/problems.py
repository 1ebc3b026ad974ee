"""Objective oracles.

Analytic test functions plus the dual functions of three resource
allocation problems (TCP rate control, quadratic-cost network flow, task
allocation). Dual oracles solve each local primal subproblem in closed form,
so ``grad f`` is the constraint residual at the recovered primal point.

All generators draw from ``numpy.random.Generator(Philox(seed))``.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import lsq_linear

from . import _kernels
from .optimizer import Domain, DomainKind


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used for every random draw in the package."""
    return np.random.Generator(np.random.Philox(int(seed)))


class KinkProximityError(ValueError):
    """The finite-difference stencil straddles a change of primal active set."""


class ObjectiveOracle:
    """Convex objective with an L-Lipschitz gradient on a simple domain.

    Subclasses implement :meth:`value_and_grad`; the remaining attributes
    describe what is known about the function.
    """

    dims: int
    domain: Domain
    lipschitz: float
    grad_bound: Optional[float] = None
    strong_convexity: Optional[float] = None
    f_star: Optional[float] = None
    x_star: Optional[np.ndarray] = None

    def value_and_grad(self, x):
        raise NotImplementedError

    def value(self, x) -> float:
        return self.value_and_grad(x)[0]

    def grad(self, x) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def active_pattern(self, x):
        """Hashable description of the primal active set at ``x`` (None if smooth)."""
        return None

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dims,):
            raise ValueError(f"expected a point of shape ({self.dims},), got {x.shape}")
        return x

    def empirical_lipschitz(self, seed=0, pairs=2000, low=0.0, high=1.0, radius=None):
        """Largest sampled ``||grad u - grad v|| / ||u - v||``, times 1.1."""
        rng = make_rng(seed)
        best = 0.0
        for _ in range(pairs):
            u = rng.uniform(low, high, self.dims)
            if radius is None:
                v = rng.uniform(low, high, self.dims)
            else:
                v = u + rng.normal(size=self.dims) * radius
            if self.domain.kind is not DomainKind.UNCONSTRAINED:
                lo, hi = self.domain.bounds(self.dims)
                u, v = np.clip(u, lo, hi), np.clip(v, lo, hi)
            du = np.linalg.norm(u - v)
            if du == 0:
                continue
            best = max(best, np.linalg.norm(self.grad(u) - self.grad(v)) / du)
        return 1.1 * best


# ---------------------------------------------------------------------------
# quadratics


class QuadraticOracle(ObjectiveOracle):
    """``f(x) = 0.5 (x - c)^T H (x - c) + offset`` with H symmetric positive definite.

    On a constrained domain the minimiser over the domain is found once at
    construction (bounded least squares on the Cholesky factor).
    """

    def __init__(self, H, center, domain: Optional[Domain] = None, offset: float = 0.0):
        H = np.array(H, dtype=float)
        center = np.array(center, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1] or H.shape[0] != center.shape[0]:
            raise ValueError("H must be N x N and center of length N")
        if not np.allclose(H, H.T, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise ValueError("H must be symmetric")
        H = 0.5 * (H + H.T)
        eig = np.linalg.eigvalsh(H)
        if eig[0] <= 0:
            raise ValueError("H must be positive definite")
        self.hessian = np.ascontiguousarray(H)
        self.center = center
        self.offset = float(offset)
        self.dims = center.shape[0]
        self.domain = domain if domain is not None else Domain.unconstrained()
        self.lipschitz = float(eig[-1])
        self.strong_convexity = float(eig[0])
        self.x_star = self._constrained_minimiser()
        self.f_star = self.value(self.x_star)

    def _constrained_minimiser(self):
        if self.domain.kind is DomainKind.UNCONSTRAINED:
            return self.center.copy()
        lo, hi = self.domain.bounds(self.dims)
        if np.all(self.center >= lo) and np.all(self.center <= hi):
            return self.center.copy()
        R = np.linalg.cholesky(self.hessian).T
        res = lsq_linear(R, R @ self.center, bounds=(lo, hi), method="bvls", tol=1e-14)
        return np.clip(res.x, lo, hi)

    def value_and_grad(self, x):
        x = self._check(x)
        r = x - self.center
        g = self.hessian @ r
        return 0.5 * float(r @ g) + self.offset, g

    def to_dict(self):
        return {"family": "quadratic", "H": self.hessian.tolist(), "center": self.center.tolist(),
                "domain": self.domain.to_dict(), "offset": self.offset}


def quadratic_oracle(x_star, scale: float = 1.0, domain: Optional[Domain] = None) -> QuadraticOracle:
    """``(scale / 2) ||x - x_star||^2``."""
    if not scale > 0:
        raise ValueError(f"scale must be > 0, got {scale}")
    x_star = np.asarray(x_star, dtype=float)
    return QuadraticOracle(scale * np.eye(x_star.shape[0]), x_star, domain)


def random_quadratic(seed: int, N: int, cond: float = 10.0, domain: Optional[Domain] = None,
                     center_scale: float = 1.0) -> QuadraticOracle:
    """Random SPD quadratic with eigenvalues log-spaced in [1, cond]."""
    if N < 1 or not cond >= 1:
        raise ValueError("need N >= 1 and cond >= 1")
    rng = make_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(N, N)))
    lam = np.geomspace(1.0, cond, N) if N > 1 else np.array([1.0])
    H = (Q * lam) @ Q.T
    return QuadraticOracle(0.5 * (H + H.T), rng.normal(size=N) * center_scale, domain)


class ScalarBenchmarkOracle(ObjectiveOracle):
    """One-dimensional function with minimiser 1 used to show why the step must vanish.

    ``variant="smooth"`` (default) is the convex Huber form: ``0.5 (x-1)^2``
    for ``|x - 1| <= 1`` and ``|x - 1| - 0.5`` beyond, with gradient
    ``clip(x - 1, -1, 1)``. ``variant="printed"`` keeps the outer branch
    ``sign(x - 1)`` literally; it is discontinuous at ``|x - 1| = 1`` and its
    gradient there is taken as 0.
    """

    def __init__(self, variant: str = "smooth", domain: Optional[Domain] = None):
        if variant not in ("smooth", "printed"):
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.dims = 1
        self.domain = domain if domain is not None else Domain.orthant()
        self.lipschitz = 1.0
        self.grad_bound = 1.0
        self.f_star = 0.0
        self.x_star = np.array([1.0])

    def value_and_grad(self, x):
        x = self._check(x)
        r = x[0] - 1.0
        if abs(r) <= 1.0:
            return 0.5 * r * r, np.array([r])
        if self.variant == "smooth":
            return abs(r) - 0.5, np.array([math.copysign(1.0, r)])
        return math.copysign(1.0, r), np.array([0.0])

    def active_pattern(self, x):
        r = float(np.asarray(x, dtype=float)[0]) - 1.0
        return (int(np.sign(r)) if abs(r) > 1.0 else 0,)

    def to_dict(self):
        return {"family": "scalar", "variant": self.variant}


def scalar_benchmark_oracle(variant: str = "smooth") -> ScalarBenchmarkOracle:
    return ScalarBenchmarkOracle(variant)


# ---------------------------------------------------------------------------
# TCP flow control


@dataclass(frozen=True, eq=False)
class TcpNetwork:
    """Sources sharing links; ``A[l, s] = 1`` when source s routes over link l."""

    A: np.ndarray
    c: np.ndarray
    u: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or not np.all((A == 0) | (A == 1)):
            raise ValueError("routing matrix must be a 0/1 matrix")
        if np.any(A.sum(axis=0) == 0) or np.any(A.sum(axis=1) == 0):
            raise ValueError("every source needs a link and every link a source")
        n_links, n_src = A.shape
        c = np.broadcast_to(np.asarray(self.c, dtype=float), (n_links,)).copy()
        u = np.broadcast_to(np.asarray(self.u, dtype=float), (n_src,)).copy()
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (n_src,)).copy()
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (n_src,)).copy()
        if np.any(c <= 0) or np.any(u <= 0):
            raise ValueError("capacities and utility scales must be positive")
        if np.any(lo < 0) or np.any(lo > hi):
            raise ValueError("rate bounds need 0 <= lo <= hi")
        for k, v in (("A", A), ("c", c), ("u", u), ("lo", lo), ("hi", hi)):
            object.__setattr__(self, k, v)

    @property
    def n_links(self) -> int:
        return self.A.shape[0]

    @property
    def n_sources(self) -> int:
        return self.A.shape[1]

    def to_dict(self):
        return {"family": "tcp", "seed": self.seed, "A": self.A.astype(int).tolist(),
                "c": self.c.tolist(), "u": self.u.tolist(), "lo": self.lo.tolist(),
                "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["A"], dtype=float), d["c"], d["u"], d["lo"], d["hi"], d.get("seed"))


def generate_tcp(seed: int, S: int = 20, N: int = 100, density: float = 0.5,
                 u_scale: float = 1000.0, c_value: float = 1.0, bounds=(0.0, 1.0)) -> TcpNetwork:
    """Random routing with i.i.d. Bernoulli(density) entries.

    Empty link rows and empty source columns are redrawn (in that order,
    repeatedly) until none remain.
    """
    if S < 1 or N < 1:
        raise ValueError("need S >= 1 sources and N >= 1 links")
    if not 0 < density <= 1:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    rng = make_rng(seed)
    A = (rng.random((N, S)) < density).astype(float)
    while True:
        rows = np.flatnonzero(A.sum(axis=1) == 0)
        cols = np.flatnonzero(A.sum(axis=0) == 0)
        if rows.size == 0 and cols.size == 0:
            break
        for l in rows:
            A[l] = rng.random(S) < density
        for s in cols:
            A[:, s] = rng.random(N) < density
    return TcpNetwork(A, c_value, u_scale, bounds[0], bounds[1], seed)


class TcpDualOracle(ObjectiveOracle):
    """Dual of ``max sum_s u_s log(1 + q_s)  s.t.  A q <= c,  lo <= q <= hi``.

    ``f(x) = sum_s U_s(q_s(x)) - x^T (A q(x) - c)`` on ``x >= 0`` with
    ``q_s(x) = clamp(u_s / lambda_s - 1, lo_s, hi_s)`` and path price
    ``lambda_s = sum_l A[l, s] x_l``. A source facing a zero price sends at
    ``hi_s``.

    ``lipschitz`` is the literal constant ``mu * Nbar * Lbar`` with mu the
    strong concavity modulus of the utilities on the rate box, Nbar the
    largest number of sources on a link and Lbar the longest path.
    ``lipschitz_scaled`` is the dimensionally consistent ``Nbar * Lbar / mu``.
    """

    price_tol = 1e-12

    def __init__(self, net: TcpNetwork):
        self.net = net
        self.dims = net.n_links
        self.domain = Domain.orthant()
        self._A = np.ascontiguousarray(net.A)
        self.mu = float(np.min(net.u / (1.0 + net.hi) ** 2))
        self.n_bar = int(net.A.sum(axis=1).max())
        self.l_bar = int(net.A.sum(axis=0).max())
        self.lipschitz = self.mu * self.n_bar * self.l_bar
        self.lipschitz_scaled = self.n_bar * self.l_bar / self.mu
        self.grad_bound = float(np.linalg.norm(net.c) + np.linalg.norm(net.A @ net.hi))

    def rates(self, x) -> np.ndarray:
        x = self._check(x)
        if np.any(x < -1e-12):
            raise ValueError("TCP prices must be nonnegative")
        n = self.net
        return _kernels.tcp_rates(self._A, x, n.u, n.lo, n.hi, self.price_tol)

    primal = rates

    def value_and_grad(self, x):
        q = self.rates(x)
        x = np.asarray(x, dtype=float)
        resid = self._A @ q - self.net.c
        f = float(np.sum(self.net.u * np.log1p(q)) - x @ resid)
        return f, -resid

    def active_pattern(self, x):
        q = self.rates(x)
        return tuple(np.where(q <= self.net.lo, -1, np.where(q >= self.net.hi, 1, 0)))

    def to_dict(self):
        return self.net.to_dict()


def tcp_dual_oracle(net: TcpNetwork) -> TcpDualOracle:
    return TcpDualOracle(net)


# ---------------------------------------------------------------------------
# network flow


@dataclass(frozen=True, eq=False)
class FlowNetwork:
    """Directed graph with quadratic edge costs ``0.5 rho_e v_e^2``.

    ``A`` is the node-edge incidence (+1 where the edge leaves the node, -1
    where it enters); ``c`` the net injection per node, summing to zero.
    """

    A: np.ndarray
    c: np.ndarray
    rho: np.ndarray
    ref: int = -1
    seed: Optional[int] = None

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        c = np.asarray(self.c, dtype=float)
        rho = np.asarray(self.rho, dtype=float)
        if A.ndim != 2 or c.shape != (A.shape[0],) or rho.shape != (A.shape[1],):
            raise ValueError("incidence, injections and edge costs have mismatched sizes")
        if not (np.all((A == 1).sum(axis=0) == 1) and np.all((A == -1).sum(axis=0) == 1)
                and np.all(np.abs(A).sum(axis=0) == 2)):
            raise ValueError("every edge needs exactly one tail (+1) and one head (-1)")
        if abs(c.sum()) > 1e-9 * max(1.0, np.abs(c).sum()):
            raise ValueError(f"injections must sum to zero, got {c.sum():g}")
        if np.any(rho <= 0):
            raise ValueError("edge cost coefficients must be positive")
        for k, v in (("A", A), ("c", c), ("rho", rho)):
            object.__setattr__(self, k, v)
        object.__setattr__(self, "ref", int(self.ref) % A.shape[0])

    def to_dict(self):
        return {"family": "netflow", "seed": self.seed, "A": self.A.astype(int).tolist(),
                "c": self.c.tolist(), "rho": self.rho.tolist(), "ref": self.ref}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["A"], dtype=float), d["c"], d["rho"], d.get("ref", -1), d.get("seed"))


def generate_flow(seed: int, nodes: int = 6, extra_edges: int = 4, rho_range=(0.5, 2.0),
                  injection_scale: float = 1.0) -> FlowNetwork:
    """Connected random graph: a random spanning tree plus distinct extra edges."""
    if nodes < 2:
        raise ValueError("need at least two nodes")
    rng = make_rng(seed)
    pairs = []
    for k in range(1, nodes):
        j = int(rng.integers(0, k))
        pairs.append((k, j) if rng.random() < 0.5 else (j, k))
    free = [(i, j) for i in range(nodes) for j in range(nodes)
            if i != j and (i, j) not in pairs and (j, i) not in pairs]
    take = min(extra_edges, len(free))
    for idx in rng.choice(len(free), size=take, replace=False) if take else []:
        i, j = free[int(idx)]
        if (j, i) not in pairs:
            pairs.append((i, j))
    A = np.zeros((nodes, len(pairs)))
    for e, (i, j) in enumerate(pairs):
        A[i, e], A[j, e] = 1.0, -1.0
    c = rng.normal(size=nodes) * injection_scale
    c -= c.mean()
    rho = rng.uniform(*rho_range, size=len(pairs))
    return FlowNetwork(A, c, rho, -1, seed)


class NetflowDualOracle(QuadraticOracle):
    """Dual of ``min sum_e 0.5 rho_e v_e^2  s.t.  A v = c`` with one node price pinned to 0.

    Edge flows are ``v_e = -(A^T x)_e / rho_e``. In the reduced variables
    (all node prices except the reference one) the dual is the strongly
    convex quadratic ``0.5 x^T M x + c_r^T x`` with
    ``M = A_r diag(1/rho) A_r^T``.
    """

    def __init__(self, net: FlowNetwork):
        self.net = net
        keep = np.array([i for i in range(net.A.shape[0]) if i != net.ref])
        self._keep = keep
        Ar = net.A[keep]
        M = (Ar / net.rho) @ Ar.T
        cr = net.c[keep]
        try:
            xs = -np.linalg.solve(M, cr)
        except np.linalg.LinAlgError as exc:
            raise ValueError("flow network must be connected") from exc
        super().__init__(M, xs, Domain.unconstrained(), offset=-0.5 * float(cr @ np.linalg.solve(M, cr)))
        self._Ar = Ar

    def lift(self, x) -> np.ndarray:
        full = np.zeros(self.net.A.shape[0])
        full[self._keep] = self._check(x)
        return full

    def flows(self, x) -> np.ndarray:
        return -(self.net.A.T @ self.lift(x)) / self.net.rho

    primal = flows

    def lifted_grad(self, x) -> np.ndarray:
        return self.net.c - self.net.A @ self.flows(x)

    def to_dict(self):
        return self.net.to_dict()


def netflow_dual_oracle(net: FlowNetwork) -> NetflowDualOracle:
    return NetflowDualOracle(net)


# ---------------------------------------------------------------------------
# task allocation


@dataclass(frozen=True, eq=False)
class TaskAllocation:
    """K machines share N tasks; machine k pays ``sum_j a[k, j] w_j^2``.

    Each machine's allocation lies in ``{w >= 0, sum w <= cap}``; the machines
    together must deliver the demand ``c``.
    """

    a: np.ndarray
    c: np.ndarray
    cap: float = 3.0
    seed: Optional[int] = None

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        c = np.asarray(self.c, dtype=float)
        if c.shape != (a.shape[1],):
            raise ValueError("demand length must equal the number of tasks")
        if np.any(a <= 0):
            raise ValueError("cost coefficients must be positive")
        if not self.cap > 0:
            raise ValueError("cap must be positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "cap", float(self.cap))

    @property
    def K(self) -> int:
        return self.a.shape[0]

    @property
    def N(self) -> int:
        return self.a.shape[1]

    def to_dict(self):
        return {"family": "task", "seed": self.seed, "a": self.a.tolist(), "c": self.c.tolist(),
                "cap": self.cap}

    @classmethod
    def from_dict(cls, d):
        return cls(d["a"], d["c"], d.get("cap", 3.0), d.get("seed"))


def generate_task(seed: int, K: int = 4, N: int = 2, coef_range=(1.0, 5.0),
                  demand=(3.0, 3.0), cap: float = 3.0) -> TaskAllocation:
    if K < 1 or N < 1:
        raise ValueError("need K >= 1 machines and N >= 1 tasks")
    rng = make_rng(seed)
    a = rng.uniform(coef_range[0], coef_range[1], size=(K, N))
    c = np.broadcast_to(np.asarray(demand, dtype=float), (N,)).copy()
    return TaskAllocation(a, c, cap, seed)


@functools.lru_cache(maxsize=None)
def _kkt_cases(n):
    """Support masks and cap flags in enumeration order (size, then lexicographic)."""
    masks, caps = [], []
    for r in range(n + 1):
        for S in itertools.combinations(range(n), r):
            m = np.zeros(n, dtype=bool)
            m[list(S)] = True
            for cap_on in (False, True):
                if cap_on and r == 0:
                    continue
                masks.append(m)
                caps.append(cap_on)
    return np.array(masks), np.array(caps)


def solve_local_qps(A, price, cap, tol=1e-12):
    """Minimise ``sum_j a_kj w_j^2 + price^T w`` over ``{w >= 0, sum w <= cap}`` for every row k.

    Every support set is paired with the cap constraint inactive or active;
    the closed-form stationary point of each pair is kept when it satisfies
    the KKT conditions, and the cheapest survivor wins (the first one listed
    when several coincide at a degenerate point). Returns ``(W, case)`` with
    ``case[k]`` the index of the winning pair.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    p = np.asarray(price, dtype=float)
    K, n = A.shape
    masks, caps = _kkt_cases(n)
    scale = tol * max(1.0, cap, float(np.abs(p).max(initial=0.0)))
    inv = 1.0 / (2.0 * A)                                   # (K, n)
    M = masks[:, None, :]                                   # (C, 1, n)
    s_inv = np.where(M, inv, 0.0).sum(axis=2)               # (C, K)
    s_p = np.where(M, p * inv, 0.0).sum(axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.where(caps[:, None], (-cap - s_p) / s_inv, 0.0)
    W = np.where(M, -(p + nu[:, :, None]) * inv, 0.0)       # (C, K, n)
    ok = (nu >= -scale) & np.isfinite(nu)
    ok &= np.all(np.where(M, W >= -scale, True), axis=2)
    ok &= W.sum(axis=2) <= cap + scale
    ok &= np.all(np.where(M, True, p + nu[:, :, None] >= -scale), axis=2)
    W = np.maximum(W, 0.0)
    tot = W.sum(axis=2, keepdims=True)
    W = np.where(tot > cap, W * (cap / np.where(tot > 0, tot, 1.0)), W)
    val = np.where(ok, np.sum(A * W * W, axis=2) + W @ p, np.inf)
    best = val.min(axis=0)
    if not np.all(np.isfinite(best)):  # pragma: no cover - the feasible set is compact
        raise RuntimeError("no KKT point found")
    case = np.argmax(val <= best + 1e-15 * np.maximum(1.0, np.abs(best)), axis=0)
    return W[case, np.arange(K)], case


def solve_local_qp(a, price, cap, tol=1e-12):
    """Single-machine version of :func:`solve_local_qps`.

    Returns ``(w, support, cap_active)``.
    """
    W, case = solve_local_qps(np.asarray(a, dtype=float)[None, :], price, cap, tol)
    masks, caps = _kkt_cases(W.shape[1])
    k = int(case[0])
    return W[0], tuple(int(j) for j in np.flatnonzero(masks[k])), bool(caps[k])


class TaskDualOracle(ObjectiveOracle):
    """Dual of the task allocation problem, minimised over unconstrained prices x.

    ``f(x) = sum_k (-C_k(w_k(x)) - x^T w_k(x)) + x^T c`` where ``w_k(x)``
    maximises ``-C_k(w) - x^T w`` locally; ``grad f = c - sum_k w_k(x)``.
    ``lipschitz`` is ``K / mu`` with mu the smallest cost coefficient.
    """

    def __init__(self, prob: TaskAllocation):
        self.prob = prob
        self.dims = prob.N
        self.domain = Domain.unconstrained()
        self.mu = float(prob.a.min())
        self.lipschitz = prob.K / self.mu

    def allocations(self, x) -> np.ndarray:
        x = self._check(x)
        return solve_local_qps(self.prob.a, x, self.prob.cap)[0]

    primal = allocations

    def value_and_grad(self, x):
        W = self.allocations(x)
        x = np.asarray(x, dtype=float)
        local = -np.sum(self.prob.a * W * W, axis=1) - W @ x
        return float(local.sum() + x @ self.prob.c), self.prob.c - W.sum(axis=0)

    def active_pattern(self, x):
        x = self._check(x)
        return tuple(solve_local_qps(self.prob.a, x, self.prob.cap)[1].tolist())

    def primal_cost(self, x) -> float:
        W = self.allocations(x)
        return float(np.sum(self.prob.a * W * W))

    def to_dict(self):
        return self.prob.to_dict()


def task_dual_oracle(prob: TaskAllocation) -> TaskDualOracle:
    return TaskDualOracle(prob)


# ---------------------------------------------------------------------------
# checks and (de)serialisation


def fd_gradient_check(oracle: ObjectiveOracle, x, h: float = 1e-6, on_kink: str = "raise") -> float:
    """Largest componentwise ``|fd - g| / max(1, |g|)`` with central differences.

    With ``on_kink="raise"`` a :class:`KinkProximityError` signals that the
    primal active set differs somewhere on the stencil widened to 10h, so the
    caller should resample. ``"warn"`` and ``"ignore"`` evaluate anyway; the
    dual oracles here are continuously differentiable, so a kink only costs
    O(h) accuracy. Leaving the domain always raises.
    """
    if not h > 0:
        raise ValueError("h must be > 0")
    if on_kink not in ("raise", "warn", "ignore"):
        raise ValueError(f"on_kink must be raise, warn or ignore, got {on_kink!r}")
    x = oracle._check(x)
    lo, hi = oracle.domain.bounds(oracle.dims)
    if np.any(x - 10 * h < lo) or np.any(x + 10 * h > hi):
        raise KinkProximityError("point is within 10h of the domain boundary")
    base = oracle.active_pattern(x)
    g = oracle.grad(x)
    err = 0.0
    for i in range(oracle.dims):
        e = np.zeros(oracle.dims)
        e[i] = 1.0
        if base is not None and on_kink != "ignore":
            for s in (-10 * h, 10 * h, -h, h):
                if oracle.active_pattern(x + s * e) != base:
                    msg = f"active set changes near x along coordinate {i}"
                    if on_kink == "raise":
                        raise KinkProximityError(msg)
                    warnings.warn(msg, stacklevel=2)
                    break
        fd = (oracle.value(x + h * e) - oracle.value(x - h * e)) / (2 * h)
        err = max(err, abs(fd - g[i]) / max(1.0, abs(g[i])))
    return err


def instance_to_dict(obj) -> dict:
    return obj.to_dict()


def instance_from_dict(d: dict):
    fam = d["family"]
    if fam == "tcp":
        return TcpNetwork.from_dict(d)
    if fam == "netflow":
        return FlowNetwork.from_dict(d)
    if fam == "task":
        return TaskAllocation.from_dict(d)
    if fam == "quadratic":
        return QuadraticOracle(d["H"], d["center"], Domain.from_dict(d["domain"]), d.get("offset", 0.0))
    if fam == "scalar":
        return ScalarBenchmarkOracle(d.get("variant", "smooth"))
    raise ValueError(f"unknown problem family {fam!r}")


def save_instance(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(obj), fh, indent=1, sort_keys=True)


def load_instance(path):
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def oracle_for(instance) -> ObjectiveOracle:
    """Wrap an instance in its dual oracle (oracles pass through unchanged)."""
    if isinstance(instance, TcpNetwork):
        return TcpDualOracle(instance)
    if isinstance(instance, FlowNetwork):
        return NetflowDualOracle(instance)
    if isinstance(instance, TaskAllocation):
        return TaskDualOracle(instance)
    if isinstance(instance, ObjectiveOracle):
        return instance
    raise TypeError(f"no oracle for {type(instance).__name__}")
