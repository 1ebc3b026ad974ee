"""Iteration engines for quantized gradient methods.

Two recursions are supported:

* the general quantized step ``x <- P(x - gamma * d)`` with ``d`` the element
  of a quantization set best aligned with the gradient, and
* the projected sign step on the nonnegative orthant
  ``x <- max(x - gamma / sqrt(N) * sign(grad), 0)``.

:func:`run` drives either one to a stopping rule and records a
:class:`RunTrace`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels
from .quantization import Kind, QuantizationSet, ZERO_TOL, bits_per_iteration, quantize


class DomainKind(str, Enum):
    UNCONSTRAINED = "unconstrained"
    ORTHANT = "orthant"
    BOX = "box"


@dataclass(frozen=True, eq=False)
class Domain:
    kind: DomainKind
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind is DomainKind.BOX:
            lo = np.asarray(self.lower, dtype=float)
            hi = np.asarray(self.upper, dtype=float)
            if lo.shape != hi.shape or lo.ndim != 1:
                raise ValueError("box bounds must be 1-D arrays of equal length")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("box bounds must be finite")
            if np.any(lo > hi):
                raise ValueError("box needs lower <= upper componentwise")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)

    @classmethod
    def unconstrained(cls):
        return cls(DomainKind.UNCONSTRAINED)

    @classmethod
    def orthant(cls):
        return cls(DomainKind.ORTHANT)

    @classmethod
    def box(cls, lower, upper):
        return cls(DomainKind.BOX, lower, upper)

    def bounds(self, n: int):
        """Lower and upper clamp vectors of length ``n``."""
        if self.kind is DomainKind.UNCONSTRAINED:
            return np.full(n, -np.inf), np.full(n, np.inf)
        if self.kind is DomainKind.ORTHANT:
            return np.zeros(n), np.full(n, np.inf)
        if self.lower.shape != (n,):
            raise ValueError(f"box has dimension {self.lower.shape[0]}, point has {n}")
        return self.lower, self.upper

    def contains(self, x, tol: float = 0.0) -> bool:
        lo, hi = self.bounds(len(x))
        return bool(np.all(x >= lo - tol) and np.all(x <= hi + tol))

    def to_dict(self):
        d = {"kind": self.kind.value}
        if self.kind is DomainKind.BOX:
            d["lower"] = self.lower.tolist()
            d["upper"] = self.upper.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        kind = DomainKind(d["kind"])
        if kind is DomainKind.BOX:
            return cls.box(d["lower"], d["upper"])
        return cls(kind)


def project(x, domain: Domain) -> np.ndarray:
    """Euclidean projection onto ``domain`` (a componentwise clamp)."""
    x = np.asarray(x, dtype=float)
    if domain.kind is DomainKind.UNCONSTRAINED:
        return x.copy()
    if domain.kind is DomainKind.ORTHANT:
        return np.maximum(x, 0.0)
    lo, hi = domain.bounds(x.shape[0])
    return np.minimum(np.maximum(x, lo), hi)


# ---------------------------------------------------------------------------
# step-size schedules


@dataclass(frozen=True)
class StepSchedule:
    """gamma(t) = gamma0 for ``constant``; gamma0 / (1 + t)**p for ``power``."""

    kind: str
    gamma0: float
    p: float = 0.0

    def __call__(self, t: int) -> float:
        if self.kind == "constant":
            return self.gamma0
        return self.gamma0 / (1.0 + t) ** self.p

    @property
    def exponent(self) -> float:
        return 0.0 if self.kind == "constant" else self.p

    def to_dict(self):
        if self.kind == "constant":
            return {"kind": "constant", "gamma": self.gamma0}
        return {"kind": "power", "gamma0": self.gamma0, "p": self.p}


def make_schedule(kind: str, gamma: Optional[float] = None, *, gamma0: Optional[float] = None,
                  p: Optional[float] = None) -> StepSchedule:
    """Validated step schedule.

    ``power`` schedules must vanish and be non-summable, which pins the
    exponent to (0, 1].
    """
    if kind == "constant":
        if gamma is None or not gamma > 0 or not math.isfinite(gamma):
            raise ValueError(f"constant step needs gamma > 0, got {gamma}")
        return StepSchedule("constant", float(gamma))
    if kind == "power":
        g0 = gamma0 if gamma0 is not None else gamma
        if g0 is None or not g0 > 0 or not math.isfinite(g0):
            raise ValueError(f"power schedule needs gamma0 > 0, got {g0}")
        if p is None:
            raise ValueError("power schedule needs an exponent p")
        if p > 1:
            raise ValueError(
                f"summable schedule: p={p} > 1 makes sum gamma(t) finite, "
                "so iterates can stall short of the optimum")
        if p <= 0:
            raise ValueError(f"non-vanishing schedule: p={p} <= 0 keeps gamma(t) away from 0")
        return StepSchedule("power", float(g0), float(p))
    raise ValueError(f"unknown schedule kind {kind!r}")


# ---------------------------------------------------------------------------
# stopping rules


class StopKind(str, Enum):
    GRAD_NORM = "grad_norm"
    L_ALPHA = "l_alpha"
    GAP = "gap"
    MAX_ITER = "max_iter"


@dataclass(frozen=True)
class StoppingRule:
    kind: StopKind
    eps: Optional[float] = None
    alpha: float = 1.0
    max_iter: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", StopKind(self.kind))
        if self.kind is StopKind.MAX_ITER:
            if self.max_iter is None or self.max_iter < 0:
                raise ValueError("max_iter rule needs T >= 0")
        elif self.eps is None or not self.eps > 0:
            raise ValueError(f"{self.kind.value} rule needs eps > 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")

    @classmethod
    def grad_norm(cls, eps):
        return cls(StopKind.GRAD_NORM, eps)

    @classmethod
    def l_alpha(cls, eps, alpha=1.0):
        return cls(StopKind.L_ALPHA, eps, alpha)

    @classmethod
    def gap(cls, eps):
        return cls(StopKind.GAP, eps)

    @classmethod
    def iterations(cls, T):
        return cls(StopKind.MAX_ITER, max_iter=T)

    def to_dict(self):
        d = {"kind": self.kind.value}
        if self.kind is StopKind.MAX_ITER:
            d["max_iter"] = self.max_iter
        else:
            d["eps"] = self.eps
            if self.kind is StopKind.L_ALPHA:
                d["alpha"] = self.alpha
        return d


# ---------------------------------------------------------------------------
# single steps


def _check_dims(x, g):
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    if x.ndim != 1 or x.shape != g.shape:
        raise ValueError(f"dimension mismatch: x {x.shape}, gradient {g.shape}")
    return x, g


def qgm_step(x, gradient, D: QuantizationSet, gamma: float, domain: Domain) -> np.ndarray:
    """One quantized gradient step ``P(x - gamma * quantize(gradient))``.

    A (numerically) zero gradient holds the iterate in place.
    """
    x, g = _check_dims(x, gradient)
    if x.shape[0] != D.dims:
        raise ValueError(f"point has dimension {x.shape[0]}, set has {D.dims}")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    d = quantize(g, D)
    if d is None:
        return x.copy()
    return project(x - gamma * d, domain)


def sign_projected_step(x, gradient, gamma: float) -> np.ndarray:
    """``max(x - gamma/sqrt(N) * sign(gradient), 0)`` with sign(0) = +1.

    This is the literal recursion: unlike :func:`qgm_step` there is no hold
    rule, so a zero gradient still moves every coordinate down by
    ``gamma/sqrt(N)`` before clamping.
    """
    x, g = _check_dims(x, gradient)
    if np.any(x < 0):
        raise ValueError("sign projected step needs x in the nonnegative orthant")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    n = x.shape[0]
    return _kernels.sign_step(x, g, gamma / math.sqrt(n), np.zeros(n), np.full(n, np.inf))


def measure_L_alpha(x, gradient, alpha: float = 1.0) -> float:
    """``|| x - max(x - alpha * grad, 0) ||``; zero exactly at orthant optima."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    x, g = _check_dims(x, gradient)
    return float(np.linalg.norm(x - np.maximum(x - alpha * g, 0.0)))


def scalar_projection_margins(x, z, alpha1, alpha2, beta, ulps: float = 8.0):
    """Evaluate three scalar projection inequalities.

    Returns ``(holds, sides)`` where ``holds`` is a triple of booleans and
    ``sides`` the (left, right) values of

    1. ``beta |x - [x - z]+| <= |x - [x - beta z]+|``
    2. ``|x - [x - a1 z]+| <= |x - [x - a2 z]+|``
    3. ``0 <= z (x - [x - a1 z]+)``

    Works elementwise on arrays as well as on scalars. Comparisons allow
    ``ulps`` units of roundoff at the scale of ``|x| + max(1, a2) |z|``,
    since ``x - [x - z]+`` cancels catastrophically when ``|z| << |x|``.
    """
    x, z, a1, a2, b = (np.asarray(v, dtype=float) for v in (x, z, alpha1, alpha2, beta))
    if np.any((b < 0) | (b > 1)):
        raise ValueError("beta must lie in [0, 1]")
    if np.any(x < 0) or np.any(a1 < 0) or np.any(a2 < 0):
        raise ValueError("x, alpha1, alpha2 must be >= 0")
    if np.any(a1 > a2):
        raise ValueError("need alpha1 <= alpha2")
    pos = lambda v: np.maximum(v, 0.0)
    s1 = (b * np.abs(x - pos(x - z)), np.abs(x - pos(x - b * z)))
    s2 = (np.abs(x - pos(x - a1 * z)), np.abs(x - pos(x - a2 * z)))
    s3 = (np.zeros_like(x * z), z * (x - pos(x - a1 * z)))
    tol = ulps * np.finfo(float).eps * (np.abs(x) + np.maximum(1.0, a2) * np.abs(z))
    holds = (s1[0] <= s1[1] + tol, s2[0] <= s2[1] + tol, s3[0] <= s3[1] + tol * np.abs(z))
    if np.ndim(holds[0]) == 0:
        holds = tuple(bool(h) for h in holds)
    return holds, (s1, s2, s3)


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunTrace:
    t: np.ndarray
    f: np.ndarray
    grad_norm: np.ndarray
    l_alpha: np.ndarray
    gamma: np.ndarray
    bits: np.ndarray
    x_final: np.ndarray
    hit_iteration: Optional[int]
    stop_reason: str
    bits_per_iteration: int
    has_l_alpha: bool
    x: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return len(self.t)

    @property
    def iterations(self) -> int:
        return int(self.t[-1])

    def floor(self, frac: float = 0.1) -> float:
        """Mean of L_alpha (or the gradient norm) over the final ``frac`` of rows."""
        series = self.l_alpha if self.has_l_alpha else self.grad_norm
        k = max(1, int(math.ceil(frac * len(series))))
        return float(np.mean(series[-k:]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("t,f,grad_norm,l_alpha,gamma,bits\n")
            for i in range(len(self.t)):
                la = format(self.l_alpha[i], ".17g") if self.has_l_alpha else ""
                fh.write(f"{int(self.t[i])},{self.f[i]:.17g},{self.grad_norm[i]:.17g},"
                         f"{la},{self.gamma[i]:.17g},{int(self.bits[i])}\n")


def _normalize_rules(stopping):
    if stopping is None:
        return []
    if isinstance(stopping, StoppingRule):
        return [stopping]
    return list(stopping)


def _bits(D):
    try:
        return bits_per_iteration(D)
    except ValueError:
        return 0


def run(oracle, D: QuantizationSet, schedule: StepSchedule,
        stopping: Union[StoppingRule, Sequence[StoppingRule], None] = None,
        max_iter: int = 10_000, x0=None, record_x: bool = False,
        alpha: float = 1.0, zero_tol: float = ZERO_TOL, fused: Optional[bool] = None) -> RunTrace:
    """Iterate the quantized recursion from ``x0`` until a rule fires.

    Rules are checked on ``x(t)`` *before* the step, so ``hit_iteration`` is
    the first ``t`` with ``x(t)`` in the target set (possibly 0). One trace
    row is recorded for every visited ``t``. Sign sets on the orthant use the
    O(N) sign step. Quadratic oracles with a single rule go through a fused
    compiled loop unless ``fused=False``.
    """
    domain = oracle.domain
    N = oracle.dims
    if D.dims != N:
        raise ValueError(f"quantization set has dimension {D.dims}, problem has {N}")
    if max_iter < 0:
        raise ValueError("max_iter must be >= 0")
    rules = _normalize_rules(stopping)
    for r in rules:
        if r.kind is StopKind.GAP and oracle.f_star is None:
            raise ValueError("gap stopping rule needs a known optimal value f*")
        if r.kind is StopKind.L_ALPHA and domain.kind is DomainKind.UNCONSTRAINED:
            raise ValueError("L_alpha stopping rule needs a constrained domain")
        if r.kind is StopKind.MAX_ITER:
            max_iter = min(max_iter, r.max_iter)
    if not D.enumerated and D.kind is not Kind.SIGN:  # pragma: no cover - guarded by QuantizationSet
        raise ValueError("set must be enumerated")
    x0 = np.zeros(N) if x0 is None else np.array(x0, dtype=float)
    if x0.shape != (N,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({N},)")
    if not domain.contains(x0, tol=1e-12):
        raise ValueError("x0 is not feasible for the domain")

    has_la = domain.kind is not DomainKind.UNCONSTRAINED
    la_alpha = alpha
    for r in rules:
        if r.kind is StopKind.L_ALPHA:
            la_alpha = r.alpha
    bpi = _bits(D)
    use_sign = D.kind is Kind.SIGN
    lo, hi = domain.bounds(N)

    eligible = hasattr(oracle, "hessian") and len([r for r in rules if r.kind is not StopKind.MAX_ITER]) <= 1
    if fused is None:
        fused = eligible
    if fused and not eligible:
        raise ValueError("fused loop needs a quadratic oracle and at most one accuracy rule")

    if fused:
        rule_code, eps = _kernels.STOP_NONE, 0.0
        for r in rules:
            if r.kind is StopKind.GRAD_NORM:
                rule_code, eps = _kernels.STOP_GRAD_NORM, r.eps
            elif r.kind is StopKind.L_ALPHA:
                rule_code, eps = _kernels.STOP_L_ALPHA, r.eps
            elif r.kind is StopKind.GAP:
                rule_code, eps = _kernels.STOP_GAP, r.eps
        E = D.elements if D.enumerated and not use_sign else np.zeros((1, N))
        fstar = oracle.f_star - oracle.offset if oracle.f_star is not None else 0.0
        f, gn, la, gam, X, xf, hit = _kernels.run_quadratic(
            oracle.hessian, oracle.center, x0, np.ascontiguousarray(E, dtype=float), use_sign,
            lo, hi, float(schedule.gamma0), float(schedule.exponent), rule_code, float(eps),
            float(la_alpha), float(fstar), int(max_iter), bool(record_x), float(zero_tol), has_la)
        # the kernel measures f relative to its centre; add the constant offset
        f = f + oracle.offset
        hit = None if hit < 0 else int(hit)
        rows = len(f)
        return RunTrace(
            t=np.arange(rows), f=f, grad_norm=gn, l_alpha=la, gamma=gam,
            bits=np.arange(rows, dtype=np.int64) * bpi, x_final=xf, hit_iteration=hit,
            stop_reason=_reason(rules, hit), bits_per_iteration=bpi, has_l_alpha=has_la,
            x=X if record_x else None)

    fs, gns, las, gams, xs = [], [], [], [], []
    x = x0.copy()
    hit = None
    sq = math.sqrt(N)
    E = D.elements
    t = 0
    while True:
        fv, g = oracle.value_and_grad(x)
        gn = float(np.linalg.norm(g))
        la = float(np.linalg.norm(x - np.minimum(np.maximum(x - la_alpha * g, lo), hi))) if has_la else math.nan
        gam = schedule(t)
        fs.append(fv)
        gns.append(gn)
        las.append(la)
        gams.append(gam)
        if record_x:
            xs.append(x.copy())
        if _satisfied(rules, fv, gn, la, oracle.f_star):
            hit = t
            break
        if t >= max_iter:
            break
        if gn > zero_tol:
            if use_sign:
                x = _kernels.sign_step(x, g, gam / sq, lo, hi)
            else:
                d = E[_kernels.first_argmax(E, g / gn)]
                x = np.minimum(np.maximum(x - gam * d, lo), hi)
        t += 1
    rows = len(fs)
    return RunTrace(
        t=np.arange(rows), f=np.array(fs), grad_norm=np.array(gns), l_alpha=np.array(las),
        gamma=np.array(gams), bits=np.arange(rows, dtype=np.int64) * bpi, x_final=x,
        hit_iteration=hit, stop_reason=_reason(rules, hit), bits_per_iteration=bpi,
        has_l_alpha=has_la, x=np.array(xs) if record_x else None)


def _satisfied(rules, fv, gn, la, fstar):
    for r in rules:
        if r.kind is StopKind.GRAD_NORM and gn <= r.eps:
            return True
        if r.kind is StopKind.L_ALPHA and la <= r.eps:
            return True
        if r.kind is StopKind.GAP and fv - fstar <= r.eps:
            return True
    return False


def _reason(rules, hit):
    if hit is None:
        return "max_iter"
    for r in rules:
        if r.kind is not StopKind.MAX_ITER:
            return r.kind.value
    return "max_iter"  # pragma: no cover
