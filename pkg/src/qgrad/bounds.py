"""Closed-form step-size rules and iteration bounds.

Two method families are covered:

* the quantized gradient method with a cover of cosine ``cos_theta`` on an
  unconstrained problem, gated on ``||grad f|| <= eps``;
* the projected sign method on the nonnegative orthant, gated on
  ``L_alpha(x) <= eps`` with a B-bounded gradient.

Every calculator raises :class:`InadmissibleStepError` instead of clamping a
step that falls outside the range where the bound applies.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Tuple

# added before floor() so that values like 8.999999999 from roundoff land on 9
_FLOOR_FUDGE = 1e-9


class FormulaId(str, Enum):
    DESCENT_MARGIN = "descent_margin"
    COVER_TYPE1 = "cover_type1"
    SIGN_ORTHANT_TYPE1 = "sign_orthant_type1"
    OPTIMAL_RATE = "optimal_rate"
    GAP_BOUND_RATE = "gap_bound_rate"
    STRONGLY_CONVEX = "strongly_convex"


class InadmissibleStepError(ValueError):
    """Step size outside the open interval where a bound holds."""

    def __init__(self, gamma, interval, what="step size"):
        lo, hi = interval
        super().__init__(
            f"{what} gamma={gamma:g} is inadmissible; admissible interval is ({lo:g}, {hi:g})")
        self.gamma = gamma
        self.interval = interval


class MissingConstantError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConstants:
    """Problem and accuracy constants consumed by the bound calculators.

    ``gap`` is ``f(x0) - f*``; ``K`` is an upper bound on it, used only when
    ``gap`` is absent.
    """

    L: float
    eps: Optional[float] = None
    cos_theta: float = 1.0
    N: int = 1
    alpha: float = 1.0
    B: Optional[float] = None
    mu: Optional[float] = None
    gap: Optional[float] = None
    K: Optional[float] = None
    grad0_norm: Optional[float] = None

    def __post_init__(self):
        for name in ("L", "eps", "alpha", "B", "mu", "gap", "K", "grad0_norm"):
            v = getattr(self, name)
            if v is not None and not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        if not 0 < self.cos_theta <= 1:
            raise ValueError(f"cos_theta must lie in (0, 1], got {self.cos_theta}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")

    def need(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingConstantError("missing constant(s): " + ", ".join(missing))

    @property
    def gap_or_K(self) -> float:
        if self.gap is not None:
            return self.gap
        if self.K is not None:
            return self.K
        raise MissingConstantError("missing constant(s): gap (or K)")


@dataclass
class BoundReport:
    formula_id: FormulaId
    inputs: dict
    gamma: Optional[float] = None
    gamma_star: Optional[float] = None
    gamma_range: Optional[Tuple[float, float]] = None
    t_upper: Optional[int] = None
    t_lower: Optional[int] = None
    epsilon_star: Optional[float] = None
    kappa_star: Optional[float] = None
    gap_bound: Optional[float] = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["formula_id"] = self.formula_id.value
        if self.gamma_range is not None:
            d["gamma_range"] = list(self.gamma_range)
        return d

    def items(self):
        """Non-empty ``(key, value)`` pairs in a stable order for printing."""
        out = [("formula", self.formula_id.value)]
        for k in ("gamma", "gamma_star", "gamma_range", "t_lower", "t_upper",
                  "epsilon_star", "kappa_star", "gap_bound"):
            v = getattr(self, k)
            if v is not None:
                out.append((k, v))
        out.extend(self.extras.items())
        return out


def _inputs(c: ProblemConstants):
    return {k: v for k, v in asdict(c).items() if v is not None}


def _sign_scale(c: ProblemConstants) -> float:
    # alpha^2 B N^{3/2}, the factor the sign method loses against a full gradient
    return c.alpha ** 2 * c.B * c.N ** 1.5


def _check_gamma(gamma, hi):
    if gamma is None:
        return
    if not (0 < gamma < hi):
        raise InadmissibleStepError(gamma, (0.0, hi))


def descent_margins(c: ProblemConstants, gamma: float, require_bar: bool = False) -> dict:
    """Guaranteed one-step decrease of f outside the target set.

    ``delta`` applies to the cover method (``||grad|| > eps``), ``delta_bar``
    to the projected sign method (``L_alpha > eps``). Either is positive
    exactly when gamma is inside the matching admissible interval.
    ``delta_bar`` needs B; it is ``None`` when B is absent unless
    ``require_bar`` asks for an error instead.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    c.need("eps")
    d = delta(c, gamma)
    out = {"delta": d, "delta_positive": d > 0,
           "delta_range": (0.0, 2 * c.cos_theta * c.eps / c.L),
           "delta_bar": None, "delta_bar_positive": None, "delta_bar_range": None}
    if c.B is None:
        if require_bar:
            raise MissingConstantError("missing constant(s): B (needed for delta_bar)")
        return out
    db = delta_bar(c, gamma)
    out.update(delta_bar=db, delta_bar_positive=db > 0,
               delta_bar_range=(0.0, 2 * c.eps ** 2 / (c.L * _sign_scale(c))))
    return out


def delta(c: ProblemConstants, gamma: float) -> float:
    c.need("eps")
    return (2 * c.cos_theta * c.eps / c.L - gamma) * (c.L / 2) * gamma


def delta_bar(c: ProblemConstants, gamma: float) -> float:
    c.need("eps", "B")
    return (2 * c.eps ** 2 / (c.L * _sign_scale(c)) - gamma) * (c.L / 2) * gamma


def t_lower_bound(grad0_norm: float, eps: float, gamma: float, L: float) -> int:
    """Fewest iterations that can shrink ``||grad||`` from grad0_norm to eps.

    Each step moves x by at most gamma, so the gradient changes by at most
    gamma * L per step.
    """
    return max(0, math.floor((grad0_norm - eps) / (gamma * L) + _FLOOR_FUDGE))


def type1_plan(c: ProblemConstants, gamma: Optional[float] = None,
               constrained: bool = False) -> BoundReport:
    """Step range, optimal step and iteration bounds for reaching eps.

    Unconstrained (cover method): gamma in (0, 2 cos_theta eps / L), best
    gamma = cos_theta eps / L, and both an upper and a lower bound on the
    first hit of ``||grad f|| <= eps``.

    Constrained (sign method on the orthant): gamma in
    (0, 2 eps^2 / (L alpha^2 B N^1.5)), best gamma half of that, and an upper
    bound on the first hit of ``L_alpha <= eps``.
    """
    c.need("eps")
    if constrained:
        c.need("B")
        s = _sign_scale(c)
        hi = 2 * c.eps ** 2 / (c.L * s)
        _check_gamma(gamma, hi)
        g_star = c.eps ** 2 / (c.L * s)
        g = g_star if gamma is None else gamma
        rep = BoundReport(FormulaId.SIGN_ORTHANT_TYPE1, _inputs(c), gamma=g,
                          gamma_star=g_star, gamma_range=(0.0, hi))
        if c.gap is not None or c.K is not None:
            rep.t_upper = math.ceil(2 * c.gap_or_K * s / (g * (2 * c.eps ** 2 - c.L * g * s)))
        return rep

    hi = 2 * c.cos_theta * c.eps / c.L
    _check_gamma(gamma, hi)
    g_star = c.cos_theta * c.eps / c.L
    g = g_star if gamma is None else gamma
    rep = BoundReport(FormulaId.COVER_TYPE1, _inputs(c), gamma=g, gamma_star=g_star,
                      gamma_range=(0.0, hi))
    if c.gap is None and c.K is None and c.grad0_norm is None:
        raise MissingConstantError("missing constant(s): gap (or K) or grad0_norm")
    if c.gap is not None or c.K is not None:
        rep.t_upper = math.ceil(2 * c.gap_or_K / (g * (2 * c.cos_theta * c.eps - c.L * g)))
    if c.grad0_norm is not None:
        rep.t_lower = t_lower_bound(c.grad0_norm, c.eps, g, c.L)
    return rep


def optimal_rate_plan(T: int, c: ProblemConstants, use_K: bool = False) -> BoundReport:
    """Accuracy reachable within T iterations and the step that achieves it.

    Returns ``epsilon_star = sqrt(2 L gap) / (cos_theta sqrt T)`` with
    ``gamma_star = sqrt(2 gap / (L T))`` and the split
    ``kappa_star + gamma_star L / (2 cos_theta) = epsilon_star``.

    With ``use_K=True`` the gap-bound variant is evaluated instead:
    ``gamma = 2K / (L T)`` with bound ``sqrt(2 L K) / (cos_theta sqrt T)``.
    """
    if int(T) != T or T < 1:
        raise ValueError(f"T must be a positive integer, got {T}")
    if use_K:
        K = c.K if c.K is not None else c.gap_or_K
        g = 2 * K / (c.L * T)
        bound = math.sqrt(2 * c.L * K) / (c.cos_theta * math.sqrt(T))
        return BoundReport(FormulaId.GAP_BOUND_RATE, _inputs(c), gamma=g, gamma_star=g,
                           epsilon_star=bound)
    gap = c.gap_or_K
    eps_star = math.sqrt(2 * c.L * gap) / (c.cos_theta * math.sqrt(T))
    g_star = math.sqrt(2 * gap / (c.L * T))
    kappa = math.sqrt(c.L * gap) / (c.cos_theta * math.sqrt(2 * T))
    return BoundReport(FormulaId.OPTIMAL_RATE, _inputs(c), gamma=g_star, gamma_star=g_star,
                       epsilon_star=eps_star, kappa_star=kappa,
                       extras={"identity_residual": kappa + g_star * c.L / (2 * c.cos_theta) - eps_star})


def strongly_convex_plan(c: ProblemConstants, gamma: Optional[float] = None) -> BoundReport:
    """Step limit and iteration bound for a mu-strongly convex objective.

    ``gamma_bar = min(2 cos_theta sqrt(mu eps) / L, sqrt(eps / L))``; without an
    explicit gamma, ``gamma_bar / 2`` is used. ``gap_bound`` is
    ``eps^2 / (2 mu)``, the largest gap any point with ``||grad|| <= eps`` can have.
    """
    c.need("eps", "mu")
    root = math.sqrt(c.mu * c.eps)
    g_bar = min(2 * c.cos_theta * root / c.L, math.sqrt(c.eps / c.L))
    _check_gamma(gamma, g_bar)
    g = g_bar / 2 if gamma is None else gamma
    rep = BoundReport(FormulaId.STRONGLY_CONVEX, _inputs(c), gamma=g, gamma_star=g_bar,
                      gamma_range=(0.0, g_bar), gap_bound=c.eps ** 2 / (2 * c.mu))
    rep.extras["gamma_bar"] = g_bar
    if c.gap is not None or c.K is not None:
        rep.t_upper = math.ceil(2 * c.gap_or_K / (g * (2 * c.cos_theta * root - c.L * g)))
    return rep


def gap_bound_strongly_convex(eps: float, mu: float) -> float:
    return eps ** 2 / (2 * mu)
