"""Decision optimization over the hedged variance functional.

Minimizing B(m, P, R) reduces to a line search: for each VPQ the optimal
price lies in [c, pbar(R)] where the functional is convex in P, and the
price-free part of the unhedgeable term depends only on R.  Ties between
near-equal minima break toward the smaller price and VPQ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import (DegenerateInputError, InternalConsistencyError,
                     NotApplicableError, ValidationError)
from .hedging import HedgeEngine, NestedMcConfig, VarianceBreakdown, get_engine
from .newsvendor import (Decision, EmpiricalDist, FrontierPoint, NvSolution,
                         solve_newsvendor)
from .processes import DemandParams, EouParams

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class HurtingCondition(NamedTuple):
    """Strength test of a negative price trend; satisfied means 'strong'."""

    lhs: float
    rhs: float
    satisfied: bool
    p_circ: float
    r_ratio: float


@dataclass(frozen=True)
class BoundsReport:
    """Optimal decisions with and without hedging plus the structural bounds."""

    m: float
    p_nv: float
    r_nv: float
    p_nvm: float
    r_nvm: float
    p_h: float
    r_h: float
    v0_h: float
    v0_se: float
    hurt_lhs: Optional[float] = None
    hurt_rhs: Optional[float] = None
    hurt_satisfied: Optional[bool] = None
    r_circ: Optional[float] = None

    @property
    def price_bound_ok(self) -> bool:
        return self.p_h <= self.p_nvm * (1.0 + 1e-9) and self.p_h <= self.p_nv * (1.0 + 1e-9)

    @property
    def vpq_bound_ok(self) -> bool:
        return self.r_h <= self.r_nvm * (1.0 + 1e-9)


def _golden_min(f, lo: float, hi: float, tol: float, tie_abs: float = 0.0):
    """Left-preferring golden-section minimum of f on [lo, hi].

    Values within ``tie_abs`` of each other count as tied and the smaller
    argument wins, so flat stretches resolve to their left edge instead of
    following floating-point jitter.  Returns (x, f(x)).
    """
    if hi < lo:
        raise DegenerateInputError(f"empty search interval [{lo}, {hi}]")
    f_lo = f(lo)
    if hi - lo <= tol:
        f_hi = f(hi)
        return (lo, f_lo) if f_lo <= f_hi + tie_abs else (hi, f_hi)
    f_hi = f(hi)
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd + tie_abs:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    # Collect candidates and prefer the smallest argument among near-ties;
    # the result may never exceed an endpoint value (lost-bracket guard).
    candidates = sorted([(lo, f_lo), (c, fc), (d, fd), (hi, f_hi)])
    best = min(fv for _, fv in candidates)
    for x, fx in candidates:
        if fx <= best + tie_abs:
            return x, fx
    return candidates[0]  # unreachable


def risk_neutral_newsvendor(dist_m: EmpiricalDist, demand: DemandParams) -> NvSolution:
    """Profit maximizer over the risk-neutral market-size distribution."""
    return solve_newsvendor(dist_m, demand)


def _best_price(engine: HedgeEngine, m: float, r: float, tie_abs: float = 0.0):
    """Minimize B(m, P, r) over P in [c, pbar(r)]; returns (p, value)."""
    dm = engine.demand
    c_inv = 1.0 / (engine.z0m - 1.0)
    q2r = engine.q2(r)
    qa, qb, qc = engine.v0_quadratic(r)

    def objective(p: float) -> float:
        gap = m - (qa * p * p + qb * p + qc)
        return gap * gap * c_inv + (p - dm.s) ** 2 * q2r

    p_hi = max(engine.p_bar(r, m), dm.c)
    if p_hi <= dm.c:
        return dm.c, objective(dm.c)
    tol = 1e-6 * max(p_hi - dm.c, 1.0)
    return _golden_min(objective, dm.c, p_hi, tol, tie_abs=tie_abs)


def minimize_B(m: float, params: EouParams, demand: DemandParams,
               cfg: NestedMcConfig) -> tuple[Decision, VarianceBreakdown]:
    """Minimize the hedged variance over (P, R) at target mean return m.

    Outer golden section over R in [b*c, R-maximizer under the risk-neutral
    measure], seeded by a coarse scan; inner price search per candidate R.
    """
    if not (math.isfinite(m) and m > 0.0):
        raise ValidationError(f"target return must be positive, got {m}")
    engine = get_engine(params, demand, cfg)
    nv_m = risk_neutral_newsvendor(engine.rn_dist, demand)
    r_lo = demand.b * demand.c
    r_hi = nv_m.r_nv
    if r_hi <= r_lo:
        raise DegenerateInputError(
            f"VPQ search interval [{r_lo}, {r_hi}] is empty")

    coarse = np.linspace(r_lo, r_hi, 13)
    probe = [_best_price(engine, m, r)[1] for r in coarse]
    # Ties across near-equal minima break toward smaller R (then smaller P in
    # the inner search), which pins the degenerate flat-objective case.
    tie_abs = 1e-9 * max(max(probe), 1e-300)

    def outer(r: float) -> float:
        return _best_price(engine, m, r, tie_abs=tie_abs)[1]

    best = min(probe)
    i = next(idx for idx, v in enumerate(probe) if v <= best + tie_abs)
    lo = coarse[max(i - 1, 0)]
    hi = coarse[min(i + 1, coarse.size - 1)]
    tol = 1e-4 * r_hi
    r_star, _ = _golden_min(outer, lo, hi, tol, tie_abs=tie_abs)
    p_star, b_val = _best_price(engine, m, r_star, tie_abs=tie_abs)
    return Decision(p=float(p_star), r=float(r_star)), engine.variance(m, p_star, r_star)


def efficient_frontier(m_values, params: EouParams, demand: DemandParams,
                       cfg: NestedMcConfig) -> list[FrontierPoint]:
    """Hedged frontier: one minimize_B point per target return; risk must be monotone."""
    ms = np.atleast_1d(np.asarray(m_values, dtype=float))
    points = []
    prev = -math.inf
    for m in ms:
        d, breakdown = minimize_B(float(m), params, demand, cfg)
        engine = get_engine(params, demand, cfg)
        share = engine.v0(d.p, d.r) / m if m != 0 else None
        risk = breakdown.risk
        if risk < prev * (1.0 - 1e-9):
            raise InternalConsistencyError("hedged frontier risk decreased in m")
        prev = risk
        points.append(FrontierPoint(m=float(m), p=d.p, r=d.r, q=d.q(demand),
                                    risk=risk, breakdown=breakdown,
                                    production_share=float(share)))
    return points


def hurting_condition(dist_m: EmpiricalDist, nv: NvSolution, demand: DemandParams,
                      tol: float = 1e-3) -> HurtingCondition:
    """Evaluate whether a negative price trend on demand is strong.

    p_circ is the risk-neutral stationary price at the unhedged optimal VPQ;
    r_ratio = (p_circ - s) / (p_nv - s) must be >= 1 when the trend hurts
    demand (up to Monte Carlo tolerance), else the premise is violated.
    """
    b, c, s = demand.b, demand.c, demand.s
    p_circ = (dist_m.exp_min(nv.r_nv) + b * c) / (2.0 * b)
    r_ratio = (p_circ - s) / (nv.p_nv - s)
    if r_ratio < 1.0 - tol:
        raise InternalConsistencyError(
            f"r_ratio = {r_ratio:.6f} < 1: the trend does not depress demand here")
    r_ratio = max(r_ratio, 1.0)
    lhs = ((nv.p_nv - s) / (r_ratio + math.sqrt(r_ratio**2 - 1.0))) * dist_m.sf(nv.r_nv)
    rhs = c - s
    return HurtingCondition(lhs=float(lhs), rhs=float(rhs), satisfied=lhs <= rhs,
                            p_circ=float(p_circ), r_ratio=float(r_ratio))


def compute_r_circ(dist_m: EmpiricalDist, nv: NvSolution, demand: DemandParams) -> float:
    """Upper bound for the hedged VPQ when the negative trend is weak.

    Solves T(R) = E^M[A 1{A <= R}] / P^M(A >= R) against its target level by
    bisection; T is strictly increasing above the unhedged VPQ.  Only defined
    when the strength condition fails (boundary cases return ~R_nv).
    """
    hc = hurting_condition(dist_m, nv, demand)
    b, c, s = demand.b, demand.c, demand.s
    scale = max(abs(hc.rhs), 1e-12)
    if hc.lhs < hc.rhs - 1e-9 * scale:
        raise NotApplicableError("the strength condition holds; no bound needed")

    root_term = hc.r_ratio + math.sqrt(hc.r_ratio**2 - 1.0)
    target = ((nv.p_nv - s) * (2.0 * b * (hc.p_circ - s) + 2.0 * b * s - b * c)
              / ((c - s) * root_term)) - nv.r_nv

    def t_func(r: float) -> float:
        sf = dist_m.sf(r)
        if sf <= 0.0:
            return math.inf
        return dist_m.exp_below(r) / sf

    lo = nv.r_nv
    if t_func(lo) >= target:
        return float(lo)
    hi = max(dist_m.samples[-1], lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_func(mid) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * max(1.0, abs(nv.r_nv)):
            break
    return float(hi)


def build_bounds_report(m: float, params: EouParams, demand: DemandParams,
                        cfg: NestedMcConfig) -> BoundsReport:
    """Solve both newsvendor problems and the hedged problem; collect the bounds."""
    engine = get_engine(params, demand, cfg)
    nv = solve_newsvendor(engine.real_dist, demand)
    nv_m = risk_neutral_newsvendor(engine.rn_dist, demand)
    d, _ = minimize_B(m, params, demand, cfg)
    v0_h = engine.v0(d.p, d.r)
    # Standard error of the v0 estimate: payoff sd over sqrt(n).
    overage = np.maximum(d.r - engine.rn_dist.samples, 0.0)
    payoff = (d.p - demand.c) * (d.r - demand.b * d.p) - (d.p - demand.s) * overage
    v0_se = float(payoff.std(ddof=1) / math.sqrt(engine.rn_dist.n))

    hurt_lhs = hurt_rhs = hurt_sat = r_circ = None
    try:
        hc = hurting_condition(engine.rn_dist, nv, demand)
        hurt_lhs, hurt_rhs, hurt_sat = hc.lhs, hc.rhs, hc.satisfied
        if not hc.satisfied:
            r_circ = compute_r_circ(engine.rn_dist, nv, demand)
    except InternalConsistencyError:
        pass  # positive-impact regime: the strength test is not defined
    return BoundsReport(m=m, p_nv=nv.p_nv, r_nv=nv.r_nv, p_nvm=nv_m.p_nv,
                        r_nvm=nv_m.r_nv, p_h=d.p, r_h=d.r, v0_h=v0_h, v0_se=v0_se,
                        hurt_lhs=hurt_lhs, hurt_rhs=hurt_rhs,
                        hurt_satisfied=hurt_sat, r_circ=r_circ)
