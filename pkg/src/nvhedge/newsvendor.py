"""Price-setting newsvendor over an empirical market-size distribution.

The firm picks a unit price P and a virtual production quantity R = Q + b*P
before the market size A_T realises.  Expected payoff:

    E[H_T(P, R)] = (P - c)(R - b P) - (P - s) E[(R - A_T)+]

All expectations are sample-exact over the empirical distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import (AssumptionViolationError, InternalConsistencyError,
                     NumericalError, ValidationError)
from .processes import DemandParams

if TYPE_CHECKING:  # pragma: no cover
    from .hedging import VarianceBreakdown


class EmpiricalDist:
    """Sorted-sample empirical distribution with prefix-sum expectations.

    Quantiles use lower interpolation (the smallest sample whose CDF weight
    reaches p), so ties resolve toward the smaller sample.
    """

    def __init__(self, samples):
        arr = np.sort(np.asarray(samples, dtype=float))
        if arr.size == 0:
            raise ValidationError("empty sample")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("samples must be finite")
        self.samples = arr
        self.n = arr.size
        self._cum = np.concatenate(([0.0], np.cumsum(arr)))
        self._cum_sq = np.concatenate(([0.0], np.cumsum(arr * arr)))
        self.mean = float(arr.mean())
        self.var = float(arr.var())
        self.std = math.sqrt(self.var)

    def _k_below(self, r):
        """Count of samples strictly below r."""
        return np.searchsorted(self.samples, np.asarray(r, dtype=float), side="left")

    def cdf(self, a):
        """P(A <= a)."""
        k = np.searchsorted(self.samples, np.asarray(a, dtype=float), side="right")
        return k / self.n

    def sf(self, r):
        """P(A >= r)."""
        return (self.n - self._k_below(r)) / self.n

    def quantile(self, p):
        pv = np.asarray(p, dtype=float)
        if np.any(pv <= 0.0) or np.any(pv > 1.0):
            raise ValidationError("quantile level must lie in (0, 1]")
        idx = np.maximum(np.ceil(pv * self.n).astype(int) - 1, 0)
        out = self.samples[idx]
        return float(out) if np.isscalar(p) else out

    def exp_min(self, r):
        """E[min(r, A)]."""
        rv = np.asarray(r, dtype=float)
        k = self._k_below(rv)
        out = (self._cum[k] + (self.n - k) * rv) / self.n
        return float(out) if np.isscalar(r) else out

    def exp_overage(self, r):
        """E[(r - A)+]."""
        rv = np.asarray(r, dtype=float)
        k = self._k_below(rv)
        out = (k * rv - self._cum[k]) / self.n
        return float(out) if np.isscalar(r) else out

    def sq_overage(self, r):
        """E[((r - A)+)^2]."""
        rv = np.asarray(r, dtype=float)
        k = self._k_below(rv)
        out = (k * rv * rv - 2.0 * rv * self._cum[k] + self._cum_sq[k]) / self.n
        return float(out) if np.isscalar(r) else out

    def var_overage(self, r):
        """Var[(r - A)+]."""
        e = self.exp_overage(r)
        out = self.sq_overage(r) - np.asarray(e) ** 2
        return float(out) if np.isscalar(r) else out

    def exp_below(self, r):
        """E[A * 1{A <= r}]."""
        k = np.searchsorted(self.samples, np.asarray(r, dtype=float), side="right")
        out = self._cum[k] / self.n
        return float(out) if np.isscalar(r) else out


@dataclass(frozen=True)
class Decision:
    """A (price, virtual production quantity) pair."""

    p: float
    r: float

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.r)):
            raise ValidationError("decision must be finite")

    def q(self, demand: DemandParams) -> float:
        return self.r - demand.b * self.p


@dataclass(frozen=True)
class NvSolution:
    """Profit-maximizing price, VPQ, production quantity and expected profit."""

    p_nv: float
    r_nv: float
    q_nv: float
    profit: float

    @property
    def decision(self) -> Decision:
        return Decision(self.p_nv, self.r_nv)


@dataclass(frozen=True)
class FrontierPoint:
    """One point of a return-risk frontier (hedged or unhedged)."""

    m: float
    p: float
    r: float
    q: float
    risk: float
    breakdown: Optional["VarianceBreakdown"] = None
    production_share: Optional[float] = None


@dataclass(frozen=True)
class AssumptionReport:
    """Sufficient-condition checks for an interior, profitable solution.

    cond_mean:   mean market size clears (sd + 2bc + sqrt(8 b (c-s) sd)) / 2
    cond_tail:   bc * P(A <= bc) + E[(-A)+] <= min(2b(c-s), 2 sqrt(b f*))
    """

    mean_a: float
    sd_a: float
    mean_threshold: float
    cond_mean: bool
    p0: float
    eps0: float
    tail_lhs: float
    tail_cap: float
    cond_tail: bool
    f_star: float

    @property
    def all_ok(self) -> bool:
        return self.cond_mean and self.cond_tail


def _validate_decision(d: Decision, demand: DemandParams) -> None:
    tol = 1e-9 * max(1.0, abs(d.p), abs(d.r))
    if d.p < demand.c - tol:
        raise ValidationError(f"price {d.p} below unit cost {demand.c}")
    if d.r < demand.b * d.p - tol:
        raise ValidationError(f"VPQ {d.r} below b*P = {demand.b * d.p} (negative production)")


def raw_expected_profit(dist: EmpiricalDist, p, r, demand: DemandParams):
    """E[H_T] without decision validation; used by searches that probe outside the cone."""
    return (p - demand.c) * (r - demand.b * p) - (p - demand.s) * dist.exp_overage(r)


def expected_profit(dist: EmpiricalDist, d: Decision, demand: DemandParams) -> float:
    """Expected production payoff at the decision."""
    _validate_decision(d, demand)
    return float(raw_expected_profit(dist, d.p, d.r, demand))


def payoff_variance(dist: EmpiricalDist, d: Decision, demand: DemandParams) -> float:
    """Variance of the production payoff: (P - s)^2 Var[(R - A_T)+]."""
    _validate_decision(d, demand)
    return float((d.p - demand.s) ** 2 * dist.var_overage(d.r))


def _price_given_r(dist: EmpiricalDist, r, demand: DemandParams):
    """Stationary price for a fixed VPQ: (b c + E[min(r, A)]) / (2 b)."""
    return (demand.b * demand.c + dist.exp_min(r)) / (2.0 * demand.b)


def solve_newsvendor(dist: EmpiricalDist, demand: DemandParams, *,
                     require_sufficient: bool = False,
                     max_iter: int = 500) -> NvSolution:
    """Solve the profit-maximization problem on the empirical distribution.

    The optimality system is

        2 b P - b c = E[min(R, A_T)],      R = F^{-1}((P - c) / (P - s)).

    The marginal condition in P has two roots; iterating the price map from
    above converges monotonically to the larger one (the maximizer).  The
    iteration runs on the discrete quantile values of R, so it terminates
    exactly; a short cycle between adjacent samples is broken by profit.
    """
    if require_sufficient:
        report = check_assumptions(dist, demand)
        if not report.all_ok:
            raise AssumptionViolationError(
                f"sufficient conditions fail: mean={report.cond_mean}, tail={report.cond_tail}")

    b, c, s = demand.b, demand.c, demand.s
    p_hi = (dist.samples[-1] + b * c) / (2.0 * b)
    if p_hi <= c:
        raise AssumptionViolationError("even the largest market sample cannot cover the cost")

    def r_of(p: float) -> float:
        frac = (p - c) / (p - s)
        return float(dist.quantile(min(frac, 1.0)))

    p = p_hi
    seen: dict[float, float] = {}
    r = None
    for _ in range(max_iter):
        if p <= c:
            raise AssumptionViolationError("no interior price above cost")
        r_new = r_of(p)
        p_new = float(_price_given_r(dist, r_new, demand))
        if r_new in seen and abs(seen[r_new] - p_new) <= 1e-12 * p_hi:
            r, p = r_new, p_new
            break
        seen[r_new] = p_new
        if abs(p_new - p) <= 1e-13 * p_hi:
            r, p = r_new, p_new
            break
        p = p_new
    else:
        r, p = _bisect_marginal(dist, demand, p_hi, r_of)

    # Candidate consistent pairs: the fixed point plus one more sweep in case
    # the quantile flips between two adjacent samples.
    candidates = {(p, r)}
    r_alt = r_of(p)
    candidates.add((float(_price_given_r(dist, r_alt, demand)), r_alt))
    best_p, best_r, best_profit = max(
        ((pc, rc, raw_expected_profit(dist, pc, rc, demand)) for pc, rc in candidates),
        key=lambda t: t[2])

    q = best_r - b * best_p
    if best_p <= c * (1.0 + 1e-12) or q <= 0.0 or best_profit <= 0.0:
        raise AssumptionViolationError(
            f"no interior solution with positive profit (P={best_p:.6g}, Q={q:.6g}, "
            f"profit={best_profit:.6g})")
    return NvSolution(p_nv=float(best_p), r_nv=float(best_r), q_nv=float(q),
                      profit=float(best_profit))


def _bisect_marginal(dist, demand, p_hi, r_of):
    """Fallback: bisect the largest downward zero of the marginal profit in P."""
    c = demand.c
    grid = np.linspace(c * (1.0 + 1e-9), p_hi, 4097)
    gap = np.array([_price_given_r(dist, r_of(p), demand) - p for p in grid])
    pos = np.nonzero(gap > 0.0)[0]
    if pos.size == 0:
        raise AssumptionViolationError("marginal profit never positive above cost")
    lo, hi = grid[pos[-1]], grid[min(pos[-1] + 1, grid.size - 1)]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _price_given_r(dist, r_of(mid), demand) - mid > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * p_hi:
            break
    r = r_of(lo)
    return r, float(_price_given_r(dist, r, demand))


def _smallest_r_root(dist, demand, p, m, r_hi, *, iters=100):
    """Smallest R with E[H_T(p, R)] = m, searched below the R-maximizer r_hi.

    Expected profit is concave in R, nonpositive at R = b*p and >= m at r_hi,
    so bisection on [b*p, r_hi] finds the lower crossing.
    """
    lo = demand.b * p
    hi = r_hi
    f_lo = raw_expected_profit(dist, p, lo, demand) - m
    if f_lo >= 0.0:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if raw_expected_profit(dist, p, mid, demand) - m < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(1.0, abs(r_hi)):
            break
    return hi


def frontier_no_hedge(dist: EmpiricalDist, demand: DemandParams, m_grid,
                      n_price: int = 256) -> list[FrontierPoint]:
    """Minimum payoff variance subject to E[H_T] = m, for each m in m_grid.

    For each price on a grid up to the profit maximizer, R is set to the
    smaller root of the mean constraint (variance rises in R); the price
    grid minimum is returned.  Risk is nondecreasing in m by construction.
    """
    nv = solve_newsvendor(dist, demand)
    m_values = np.atleast_1d(np.asarray(m_grid, dtype=float))
    if np.any(m_values <= 0.0):
        raise ValidationError("target returns must be positive")
    if np.any(m_values > nv.profit * (1.0 + 1e-9)):
        raise ValidationError(
            f"target return exceeds the maximum attainable profit {nv.profit:.6g}")

    prices = np.linspace(demand.c * (1.0 + 1e-9), nv.p_nv, n_price)
    # Best attainable mean per grid price: E[H_T] at the R-maximizer.
    r_best = dist.quantile(np.minimum((prices - demand.c) / (prices - demand.s), 1.0))
    m_best = raw_expected_profit(dist, prices, r_best, demand)

    points = []
    prev_risk = -np.inf
    for m in m_values:
        feasible = m_best >= m * (1.0 - 1e-12)
        if not np.any(feasible):
            raise ValidationError(f"target return {m:.6g} is infeasible on the price grid")
        best = None
        for p, rb in zip(prices[feasible], r_best[feasible]):
            r = _smallest_r_root(dist, demand, p, m, rb)
            v = (p - demand.s) ** 2 * dist.var_overage(r)
            if best is None or v < best[0]:
                best = (v, p, r)
        v, p, r = best
        risk = math.sqrt(max(v, 0.0))
        if risk < prev_risk * (1.0 - 1e-9):
            raise InternalConsistencyError("no-hedge frontier risk decreased in m")
        prev_risk = risk
        points.append(FrontierPoint(m=float(m), p=float(p), r=float(r),
                                    q=float(r - demand.b * p), risk=risk))
    return points


def risk_decomposition_no_hedge(scenarios, d: Decision, demand: DemandParams,
                                hedging_ctx) -> tuple[float, float]:
    """Split the unhedged payoff risk into financial and unhedgeable parts.

    The payoff is represented as V_0 + int xi dX + int delta dBtilde; the two
    squared risks are Var(financial) + Cov and Var(unhedgeable) + Cov, and
    they sum to the payoff variance up to Monte Carlo and discretization
    error.  ``hedging_ctx`` supplies path-wise xi and delta on the grid.
    """
    _validate_decision(d, demand)
    delta, xi = hedging_ctx.path_sensitivities(scenarios, d)
    dx = np.diff(scenarios.x, axis=1)
    dbt = np.diff(scenarios.demand_noise, axis=1)
    fin = np.sum(xi[:, :-1] * dx, axis=1)
    unh = np.sum(delta[:, :-1] * dbt, axis=1)
    cov = float(np.cov(fin, unh, ddof=1)[0, 1])
    fin_sq = float(np.var(fin, ddof=1)) + cov
    unh_sq = float(np.var(unh, ddof=1)) + cov
    return math.sqrt(max(fin_sq, 0.0)), math.sqrt(max(unh_sq, 0.0))


def check_assumptions(dist: EmpiricalDist, demand: DemandParams) -> AssumptionReport:
    """Evaluate sufficient conditions for an interior, profitable newsvendor solution."""
    if dist.n < 1000:
        raise ValidationError(f"need at least 1000 samples, got {dist.n}")
    b, c, s = demand.b, demand.c, demand.s
    mu_a, sd_a = dist.mean, dist.std
    threshold = 0.5 * (sd_a + 2.0 * b * c + math.sqrt(8.0 * b * (c - s) * sd_a))
    cond_mean = mu_a > threshold

    p0 = float(dist.cdf(b * c))
    eps0 = float(dist.exp_overage(0.0))
    f_star = ((mu_a - b * c - 0.5 * sd_a) ** 2 - 2.0 * b * (c - s) * sd_a) / (4.0 * b)
    lhs = b * c * p0 + eps0
    if f_star > 0.0:
        cap = min(2.0 * b * (c - s), 2.0 * math.sqrt(b * f_star))
        cond_tail = lhs <= cap
    else:
        cap = math.nan
        cond_tail = False
    return AssumptionReport(mean_a=mu_a, sd_a=sd_a, mean_threshold=threshold,
                            cond_mean=cond_mean, p0=p0, eps0=eps0, tail_lhs=lhs,
                            tail_cap=cap, cond_tail=cond_tail, f_star=f_star)
