"""Finite direction sets on the unit sphere and their covering geometry.

A quantization set ``D`` is a finite collection of unit vectors. The gradient
method only ever transmits the index of the element of ``D`` closest in angle
to the current gradient. Whether that is enough to minimise every smooth
convex function is decided by the *covering cosine*

    cos_star(D) = min_{|g| = 1} max_{d in D} <g, d>,

which is positive exactly when ``D`` positively spans the space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from . import _kernels

ZERO_TOL = 1e-12
UNIT_TOL = 1e-12
SIGN_ENUMERATION_CAP = 16
# cos_star values within this band of zero are reported as not proper
PROPER_TOL = 1e-12


class Kind(str, Enum):
    SIGN = "sign"
    MINIMAL = "minimal"
    CIRCULAR = "circular"
    NORMAL_BASIS = "normal_basis"
    CUSTOM = "custom"


class CoverMethod(str, Enum):
    ANALYTIC = "analytic"
    EXACT_2D = "exact_2d"
    GRID_MULTISTART = "grid_multistart"
    LINEAR_PROGRAM = "linear_program"


@dataclass(frozen=True, eq=False)
class QuantizationSet:
    """An ordered set of distinct unit directions in R^dims.

    ``elements`` is ``None`` only for sign sets too large to enumerate; those
    still support :func:`quantize`, :func:`bits_per_iteration` and the
    analytic branch of :func:`covering_cosine`.
    """

    dims: int
    kind: Kind
    elements: Optional[np.ndarray]
    analytic_cos_theta: Optional[float] = None
    n: Optional[int] = None

    def __post_init__(self):
        if self.dims < 1:
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        if self.elements is None:
            if self.kind is not Kind.SIGN:
                raise ValueError("only sign sets may be left unenumerated")
            return
        E = np.array(self.elements, dtype=float)
        if E.ndim != 2 or E.shape[1] != self.dims or E.shape[0] < 1:
            raise ValueError(f"elements must have shape (m >= 1, {self.dims}), got {E.shape}")
        norms = np.linalg.norm(E, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(f"element {bad} has norm {norms[bad]!r}, expected 1")
        if np.unique(np.round(E, 12), axis=0).shape[0] != E.shape[0]:
            raise ValueError("duplicate directions in quantization set")
        E.setflags(write=False)
        object.__setattr__(self, "elements", E)

    @property
    def size(self) -> int:
        if self.elements is None:
            return 2 ** self.dims
        return self.elements.shape[0]

    @property
    def enumerated(self) -> bool:
        return self.elements is not None

    def __len__(self):
        return self.size

    def __repr__(self):
        extra = f", n={self.n}" if self.n is not None else ""
        return f"QuantizationSet(kind={self.kind.value}, dims={self.dims}, size={self.size}{extra})"


@dataclass(frozen=True)
class CoverAnalysis:
    cos_star: float
    witness: np.ndarray = field(repr=False)
    proper: bool
    method: CoverMethod
    numeric_cos_star: Optional[float] = None

    @property
    def theta_star(self) -> Optional[float]:
        if self.cos_star > 0:
            return math.acos(min(1.0, self.cos_star))
        return None


@dataclass(frozen=True)
class ProperCertificate:
    proper: bool
    witness: Optional[np.ndarray] = field(default=None, repr=False)
    reason: str = ""

    def __bool__(self):
        return self.proper


def _sign_elements(N):
    k = np.arange(2 ** N, dtype=np.int64)[:, None]
    shifts = np.arange(N - 1, -1, -1, dtype=np.int64)[None, :]
    bits = (k >> shifts) & 1
    # index 0 is the all-plus vector, so lowest-index ties favour +1
    return (1.0 - 2.0 * bits) / math.sqrt(N)


def construct_set(kind, dims: Optional[int] = None, n: Optional[int] = None, *,
                  enumeration_cap: int = SIGN_ENUMERATION_CAP,
                  lazy: bool = False) -> QuantizationSet:
    """Build one of the standard quantization sets.

    Parameters
    ----------
    kind : Kind or str
        ``sign``, ``minimal``, ``circular`` or ``normal_basis``.
    dims : int
        Ambient dimension N (ignored for ``circular``, which is always 2-D).
    n : int
        Number of directions for ``circular`` (n >= 3).
    enumeration_cap : int
        Largest N for which the 2^N sign directions are materialised.
    lazy : bool
        Allow sign sets beyond the cap; they are returned unenumerated.
    """
    kind = Kind(kind)
    if kind is Kind.CIRCULAR:
        if dims not in (None, 2):
            raise ValueError(f"circular sets live in R^2, got dims={dims}")
        if n is None or n < 3:
            raise ValueError(f"circular sets need n >= 3, got n={n}")
        ang = 2.0 * np.pi * np.arange(n) / n
        E = np.column_stack([np.cos(ang), np.sin(ang)])
        return QuantizationSet(2, kind, E, math.cos(math.pi / n), n=n)

    if dims is None or dims < 1:
        raise ValueError(f"dims must be >= 1, got {dims}")
    N = int(dims)
    if kind is Kind.SIGN:
        cos_t = 1.0 / math.sqrt(N)
        if N > enumeration_cap:
            if not lazy:
                raise ValueError(
                    f"sign set with N={N} exceeds enumeration cap {enumeration_cap}; "
                    "pass lazy=True to use the O(N) fast path only")
            return QuantizationSet(N, kind, None, cos_t)
        return QuantizationSet(N, kind, _sign_elements(N), cos_t)
    if kind is Kind.MINIMAL:
        E = np.vstack([np.eye(N), -np.ones((1, N)) / math.sqrt(N)])
        cos_t = 1.0 / math.sqrt(N * N + 2.0 * math.sqrt(N) * (N - 1))
        return QuantizationSet(N, kind, E, cos_t)
    if kind is Kind.NORMAL_BASIS:
        E = np.zeros((2 * N, N))
        for i in range(N):
            E[2 * i, i] = 1.0
            E[2 * i + 1, i] = -1.0
        return QuantizationSet(N, kind, E, 1.0 / math.sqrt(N))
    raise ValueError("custom sets are built with from_directions()")


def from_directions(rows, normalize_tol: float = 1e-6) -> QuantizationSet:
    """Custom set from raw rows; rows within ``normalize_tol`` of unit norm are rescaled."""
    E = np.atleast_2d(np.asarray(rows, dtype=float))
    if E.size == 0:
        raise ValueError("empty quantization set")
    norms = np.linalg.norm(E, axis=1)
    off = np.abs(norms - 1.0)
    if np.any(off > normalize_tol):
        bad = int(np.argmax(off))
        raise ValueError(
            f"row {bad} has norm {norms[bad]:.9g}; deviation exceeds {normalize_tol:g}")
    return QuantizationSet(E.shape[1], Kind.CUSTOM, E / norms[:, None])


def load_set(path) -> QuantizationSet:
    """Read a set file: first line N, then one direction per line."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty set file")
    try:
        N = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}: first line must be the dimension, got {lines[0]!r}") from None
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        vals = [float(v) for v in ln.split()]
        if len(vals) != N:
            raise ValueError(f"{path}: line {lineno} has {len(vals)} entries, expected {N}")
        rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no directions")
    return from_directions(rows)


def save_set(D: QuantizationSet, path) -> None:
    if not D.enumerated:
        raise ValueError("cannot write an unenumerated sign set")
    with open(path, "w") as fh:
        fh.write(f"{D.dims}\n")
        for row in D.elements:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def quantize(g, D: QuantizationSet, zero_tol: float = ZERO_TOL) -> Optional[np.ndarray]:
    """Element of ``D`` best aligned with ``g``, or ``None`` to hold.

    Ties go to the lowest element index. For sign sets this is the
    componentwise sign with sign(0) = +1, computed without enumeration.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (D.dims,):
        raise ValueError(f"gradient has shape {g.shape}, expected ({D.dims},)")
    gn = float(np.linalg.norm(g))
    if gn <= zero_tol:
        return None
    if D.kind is Kind.SIGN:
        return np.where(g >= 0.0, 1.0, -1.0) / math.sqrt(D.dims)
    k = _kernels.first_argmax(D.elements, g / gn)
    return D.elements[k].copy()


def quantize_index(g, D: QuantizationSet, zero_tol: float = ZERO_TOL) -> Optional[int]:
    """Like :func:`quantize` but returns the index that would be transmitted."""
    g = np.asarray(g, dtype=float)
    if g.shape != (D.dims,):
        raise ValueError(f"gradient has shape {g.shape}, expected ({D.dims},)")
    gn = float(np.linalg.norm(g))
    if gn <= zero_tol:
        return None
    if D.kind is Kind.SIGN:
        bits = (g < 0.0).astype(np.int64)
        return int(sum(int(b) << (D.dims - 1 - i) for i, b in enumerate(bits)))
    return int(_kernels.first_argmax(D.elements, g / gn))


def bits_per_iteration(D: QuantizationSet) -> int:
    """ceil(log2 |D|)."""
    m = D.size
    if m < 2:
        raise ValueError("a singleton set carries no information (|D| must be >= 2)")
    return (m - 1).bit_length()


# ---------------------------------------------------------------------------
# covering cosine


def _support(E, w):
    return float(np.max(E @ w))


def _exact_low_dim(E):
    N = E.shape[1]
    if N == 1:
        vals = E[:, 0]
        if np.any(vals > 0) and np.any(vals < 0):
            return 1.0, np.array([1.0])
        w = np.array([-np.sign(vals[0])])
        return -1.0, w
    ang = np.sort(np.arctan2(E[:, 1], E[:, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2.0 * np.pi]]))
    i = int(np.argmax(gaps))
    mid = ang[i] + 0.5 * gaps[i]
    w = np.array([math.cos(mid), math.sin(mid)])
    return math.cos(0.5 * gaps[i]), w


def _affine_foot(EA):
    """Point of the affine hull of the rows of EA nearest the origin."""
    k = EA.shape[0]
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = EA @ EA.T
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return EA.T @ sol[:k]


def _polish(E, w, val):
    """Snap an approximate minimiser onto the exact face geometry.

    Near a local minimiser the active directions span a face whose affine hull
    sits at distance |val| from the origin; the minimiser is then the unit
    normal of that hull. Candidates are only accepted if the exact support
    value over the whole set improves, so the returned witness always attains
    the returned value.
    """
    best_w, best_v = w, val
    dots = E @ w
    for tol in (1e-8, 1e-6, 1e-4, 1e-3, 3e-3, 1e-2, 3e-2):
        EA = E[dots >= val - tol]
        p = _affine_foot(EA)
        pn = float(np.linalg.norm(p))
        cands = []
        if pn > 1e-14:
            cands += [p / pn, -p / pn]
        else:
            # origin on the affine hull: look orthogonally to the active span
            _, s, vt = np.linalg.svd(EA)
            rank = int(np.sum(s > 1e-10))
            if rank < E.shape[1]:
                cands += [vt[-1], -vt[-1]]
        for c in cands:
            v = _support(E, c)
            if v < best_v - 1e-15:
                best_w, best_v = c, v
    return best_w, best_v


def _local_grid(E, w, val, rng):
    """Probe a tangent-plane grid around ``w``; return an improved point if found."""
    N = E.shape[1]
    basis = np.linalg.svd(w[None, :])[2][1:]  # orthonormal tangent basis
    dirs = np.vstack([basis, -basis, rng.standard_normal((4 * N, N - 1)) @ basis])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    for r in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6):
        cand = w[None, :] + r * dirs
        cand /= np.linalg.norm(cand, axis=1, keepdims=True)
        vals = np.max(cand @ E.T, axis=1)
        j = int(np.argmin(vals))
        if vals[j] < val - 1e-13:
            return cand[j], float(vals[j])
    return None


def _numeric_cover(E, seed=0, starts=64, iters=1500):
    m, N = E.shape
    if N <= 2:
        cs, w = _exact_low_dim(E)
        return cs, w, CoverMethod.EXACT_2D
    rng = np.random.Generator(np.random.Philox(seed))
    S = rng.standard_normal((starts, N))
    S = np.vstack([S, -E[: min(m, 4 * N)]])
    S /= np.linalg.norm(S, axis=1, keepdims=True)
    vals, G = _kernels.sphere_descent(E, S, iters, 0.25)
    order = np.argsort(vals)
    best_w, best_v = None, np.inf
    for idx in order[:8]:
        w = G[idx] / np.linalg.norm(G[idx])
        v = _support(E, w)
        for _ in range(20):
            w, v = _polish(E, w, v)
            moved = _local_grid(E, w, v, rng)
            if moved is None:
                break
            w, v = moved
        if v < best_v:
            best_w, best_v = w, v
    return best_v, best_w, CoverMethod.GRID_MULTISTART


def covering_cosine(D: QuantizationSet, method: str = "auto", seed: int = 0,
                    starts: int = 64) -> CoverAnalysis:
    """Covering cosine of ``D`` with a witness direction.

    ``method="auto"`` reports the closed form when the kind has one and
    cross-checks it numerically (the numeric value lands in
    ``numeric_cos_star``). ``method="numeric"`` skips the closed form:
    exact angular gaps for N <= 2, seeded multistart descent with face
    polishing for N >= 3.
    """
    if D.size < 1:
        raise ValueError("empty quantization set")
    if method not in ("auto", "numeric"):
        raise ValueError(f"unknown method {method!r}")
    if not D.enumerated:
        if method == "numeric":
            raise ValueError("numeric covering cosine needs an enumerated set")
        w = np.zeros(D.dims)
        w[0] = 1.0
        cs = D.analytic_cos_theta
        return CoverAnalysis(cs, w, cs > PROPER_TOL, CoverMethod.ANALYTIC)
    num, w, how = _numeric_cover(D.elements, seed=seed, starts=starts)
    if method == "auto" and D.analytic_cos_theta is not None:
        cs = D.analytic_cos_theta
        return CoverAnalysis(cs, w, cs > PROPER_TOL, CoverMethod.ANALYTIC, numeric_cos_star=num)
    return CoverAnalysis(num, w, num > PROPER_TOL, how, numeric_cos_star=num)


def is_proper_quantization(D: QuantizationSet) -> ProperCertificate:
    """Decide whether ``D`` positively spans R^N, without using covering_cosine.

    Sets with at most N elements are rejected with the explicit separating
    direction (a null vector, or -D^{-1} 1 for a basis). Otherwise a linear
    program looks for ``a`` with ``<a, d> <= 0`` for every element and at
    least one strict inequality; such an ``a`` exists iff the origin is not
    interior to the convex hull of ``D``.
    """
    if D.size < 1:
        raise ValueError("empty quantization set")
    N = D.dims
    if not D.enumerated:
        return ProperCertificate(True, None, "sign set (every orthant covered)")
    E = D.elements
    u, s, vt = np.linalg.svd(E)
    rank = int(np.sum(s > 1e-10 * max(1.0, s[0])))
    if rank < N:
        a = vt[-1]
        if np.max(E @ a) > np.max(E @ -a):
            a = -a
        return ProperCertificate(False, a, f"elements span a {rank}-dimensional subspace")
    if E.shape[0] == N:
        a = -np.linalg.solve(E, np.ones(N))
        return ProperCertificate(False, a / np.linalg.norm(a), "|D| = N basis")
    res = linprog(E.sum(axis=0), A_ub=E, b_ub=np.zeros(E.shape[0]),
                  bounds=[(-1.0, 1.0)] * N, method="highs")
    if res.status != 0:  # pragma: no cover - bounded feasible LP
        raise RuntimeError(f"linear program failed: {res.message}")
    if res.fun < -1e-9:
        a = res.x / np.linalg.norm(res.x)
        return ProperCertificate(False, a, "separating direction found")
    return ProperCertificate(True, None, "origin interior to the convex hull")
