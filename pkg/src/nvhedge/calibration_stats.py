"""Model calibration from data and the stochastic-dominance test.

Asset parameters come from an AR(1) least-squares fit on daily log prices.
Demand parameters come from matching model-implied monthly prices and sales
to observed ones, with the per-month price produced by an embedded
newsvendor solve over simulated market-size samples (fixed noise per month,
so the objective is a deterministic function of the parameters).
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import minimize as _nm_minimize
from scipy.special import ndtr

from .errors import (AssumptionViolationError, DegenerateInputError,
                     NumericalError, ValidationError)
from .newsvendor import EmpiricalDist, solve_newsvendor
from .processes import (REAL, RISK_NEUTRAL, DemandParams, EouParams, PathGrid,
                        terminal_samples)

_MONTH_HORIZON = 1.0 / 12.0
_X_PATH_STREAM = 6
_DEMAND_NOISE_STREAM = 7
_RESTART_STREAM = 8
_SERIES_STREAM = 9

#: switch to the exact permutation distribution below this sample size
_EXACT_MAX_N = 20
_EXACT_MAX_COMBOS = 400_000


@dataclass(frozen=True)
class PriceSeries:
    """Daily spot prices with strictly increasing dates."""

    dates: tuple
    prices: np.ndarray

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        object.__setattr__(self, "prices", prices)
        if len(self.dates) != prices.size:
            raise ValidationError("dates and prices must align")
        if prices.size < 2:
            raise ValidationError("need at least two observations")
        if not np.all(np.isfinite(prices)) or np.any(prices <= 0.0):
            raise ValidationError("prices must be finite and > 0")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValidationError("dates must be strictly increasing")

    def __len__(self) -> int:
        return self.prices.size


@dataclass(frozen=True)
class OpsSeries:
    """Monthly operations data: sales, prices and the matching asset prices.

    x0 is the asset price on the first trading day of each month, xbar the
    monthly average asset price.
    """

    months: tuple
    sales: np.ndarray
    prices: np.ndarray
    x0: np.ndarray
    xbar: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("sales", "prices", "x0", "xbar"):
            arrays[name] = np.asarray(getattr(self, name), dtype=float)
            object.__setattr__(self, name, arrays[name])
        n = len(self.months)
        if any(a.size != n for a in arrays.values()) or n == 0:
            raise ValidationError("ops columns must align and be nonempty")
        if np.any(self.sales < 0.0):
            raise ValidationError("sales must be >= 0")
        if np.any(self.x0 <= 0.0) or np.any(self.xbar <= 0.0):
            raise ValidationError("asset prices must be > 0")

    def __len__(self) -> int:
        return len(self.months)


@dataclass(frozen=True)
class FitReport:
    estimates: dict
    std_errors: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    objective: Optional[float] = None
    converged: bool = True


def fit_eou(series: PriceSeries, dt_years: float = 1.0 / 252.0, *,
            horizon_t: float = _MONTH_HORIZON) -> tuple[EouParams, FitReport]:
    """AR(1) least squares on log prices.

    Regressing Y_{n+1} = a Y_n + b + eps gives kappa = (1 - a)/dt,
    alpha = b/(1 - a) and sigma^2 = RSS/(N dt).  A slope >= 1 means no mean
    reversion; kappa is clamped to zero with a warning flag and the raw
    estimate kept in the report.
    """
    if len(series) < 100:
        raise ValidationError(f"need at least 100 observations, got {len(series)}")
    y = np.log(series.prices)
    x_lag, y_next = y[:-1], y[1:]
    n_obs = x_lag.size
    var_x = float(np.var(x_lag))
    if var_x <= 1e-14 * max(1.0, float(np.mean(x_lag)) ** 2):
        raise DegenerateInputError("constant price series; the slope is undefined")

    a_hat = float(np.cov(x_lag, y_next, ddof=0)[0, 1] / var_x)
    b_hat = float(np.mean(y_next) - a_hat * np.mean(x_lag))
    resid = y_next - (a_hat * x_lag + b_hat)
    rss = float(np.sum(resid**2))
    sigma2 = rss / (n_obs * dt_years)
    sigma_hat = math.sqrt(sigma2)

    kappa_raw = (1.0 - a_hat) / dt_years
    non_mean_reverting = a_hat >= 1.0
    kappa_hat = max(kappa_raw, 0.0)
    if non_mean_reverting:
        alpha_hat = float(np.mean(y))
    else:
        alpha_hat = b_hat / (1.0 - a_hat)

    # OLS standard errors, delta method for the transformed parameters.
    s2_resid = rss / max(n_obs - 2, 1)
    se_a = math.sqrt(s2_resid / (n_obs * var_x))
    se_b = se_a * math.sqrt(float(np.mean(x_lag**2)))
    se_kappa = se_a / dt_years
    if not non_mean_reverting:
        se_alpha = math.sqrt((se_b / (1.0 - a_hat)) ** 2
                             + (b_hat * se_a / (1.0 - a_hat) ** 2) ** 2)
    else:
        se_alpha = float("nan")
    se_sigma = sigma_hat / math.sqrt(2.0 * n_obs)

    params = EouParams(kappa=kappa_hat, alpha=alpha_hat, sigma=sigma_hat,
                       x0=float(series.prices[-1]), horizon_t=horizon_t)
    report = FitReport(
        estimates={"kappa": kappa_raw, "alpha": alpha_hat, "sigma": sigma_hat,
                   "ar_slope": a_hat, "ar_intercept": b_hat},
        std_errors={"kappa": se_kappa, "alpha": se_alpha, "sigma": se_sigma,
                    "ar_slope": se_a, "ar_intercept": se_b},
        diagnostics={"n_obs": n_obs, "rss": rss,
                     "non_mean_reverting": non_mean_reverting,
                     "resid_sd": math.sqrt(s2_resid)},
        objective=rss)
    return params, report


def simulate_price_series(params: EouParams, n: int, dt_years: float = 1.0 / 252.0,
                          seed: int = 0, start_date: dt.date | None = None) -> PriceSeries:
    """Synthetic daily price series via exact log-price transitions."""
    if not (isinstance(n, int) and n >= 2):
        raise ValidationError(f"n must be an integer >= 2, got {n}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _SERIES_STREAM, 0]))
    kappa, alpha, sigma = params.kappa, params.alpha, params.sigma
    if kappa > 0.0:
        decay = math.exp(-kappa * dt_years)
        sd = sigma * math.sqrt((1.0 - math.exp(-2.0 * kappa * dt_years)) / (2.0 * kappa))
    else:
        decay = 1.0
        sd = sigma * math.sqrt(dt_years)
    y = np.empty(n)
    y[0] = params.y0
    z = rng.standard_normal(n - 1)
    for i in range(n - 1):
        y[i + 1] = alpha + (y[i] - alpha) * decay + sd * z[i]
    day0 = start_date or dt.date(2010, 1, 4)
    dates = tuple(day0 + dt.timedelta(days=i) for i in range(n))
    return PriceSeries(dates=dates, prices=np.exp(y))


# -- demand calibration ------------------------------------------------------

def _month_driver(asset: EouParams, x0: float, n_mc: int, seed: int, month_idx: int):
    """Fixed per-month noise: price-path integrals J (so C = mu0*T + mu1*J)
    and standard normals for the demand noise."""
    month_params = EouParams(kappa=asset.kappa, alpha=asset.alpha, sigma=asset.sigma,
                             x0=x0, horizon_t=_MONTH_HORIZON)
    grid = PathGrid.for_horizon(_MONTH_HORIZON)
    probe = DemandParams(mu0=0.0, mu1=1.0, sigma_tilde=1.0, b=1.0, c=1.0, s=0.0)
    j = terminal_samples(month_params, probe, grid, n_mc, seed, REAL,
                         financial_only=True, stream=_X_PATH_STREAM + (month_idx << 8))
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed), _DEMAND_NOISE_STREAM, int(month_idx)]))
    zeta = rng.standard_normal(n_mc)
    return j, zeta


class _DemandObjective:
    """Squared-error objective for the demand fit with frozen per-month noise."""

    def __init__(self, ops: OpsSeries, asset: EouParams, n_mc: int, seed: int):
        self.ops = ops
        self.sqrt_t = math.sqrt(_MONTH_HORIZON)
        self.drivers = [_month_driver(asset, float(x0), n_mc, seed, i)
                        for i, x0 in enumerate(ops.x0)]

    def __call__(self, theta) -> float:
        big_a, big_b, b, c, st = (float(v) for v in theta)
        if b <= 0.0 or st <= 0.0 or c <= 0.0:
            return 1e30
        try:
            demand = DemandParams(mu0=big_a / _MONTH_HORIZON, mu1=big_b / _MONTH_HORIZON,
                                  sigma_tilde=st, b=b, c=c, s=0.0)
        except ValidationError:
            return 1e30
        total = 0.0
        for (j, zeta), price, sales, xbar in zip(self.drivers, self.ops.prices,
                                                 self.ops.sales, self.ops.xbar):
            samples = big_a + (big_b / _MONTH_HORIZON) * j + st * self.sqrt_t * zeta
            try:
                nv = solve_newsvendor(EmpiricalDist(samples), demand)
            except (AssumptionViolationError, ValidationError):
                return 1e30
            implied_sales = big_a + big_b * xbar - b * nv.p_nv
            total += (nv.p_nv - price) ** 2 + (implied_sales - sales) ** 2
        return total


def demand_fit_objective(ops: OpsSeries, asset: EouParams, demand: DemandParams,
                         n_mc: int = 10_000, seed: int = 0) -> float:
    """Calibration objective evaluated at explicit demand parameters."""
    theta = (demand.mu0 * _MONTH_HORIZON, demand.mu1 * _MONTH_HORIZON,
             demand.b, demand.c, demand.sigma_tilde)
    return float(_DemandObjective(ops, asset, n_mc, seed)(theta))


def _default_init(ops: OpsSeries) -> np.ndarray:
    """Regression-based starting point: sales ~ A + B*xbar - b*price."""
    design = np.column_stack([np.ones(len(ops)), ops.xbar, -ops.prices])
    coef, *_ = np.linalg.lstsq(design, ops.sales, rcond=None)
    big_a = max(float(coef[0]), 10.0 * float(np.mean(ops.sales)))
    big_b = float(coef[1])
    b = max(float(coef[2]), 1e-2)
    c = 0.85 * float(np.mean(ops.prices))
    resid = ops.sales - design @ coef
    st = max(float(np.std(resid)) / math.sqrt(_MONTH_HORIZON), 1.0)
    return np.array([big_a, big_b, b, c, st])


def calibrate_demand(ops: OpsSeries, asset: EouParams, init=None, budget: int = 20,
                     *, n_mc: int = 10_000, seed: int = 0,
                     nm_iters: int = 400) -> tuple[DemandParams, FitReport]:
    """Fit (A, B, b, c, sigma_tilde) by multi-start Nelder-Mead.

    ``init`` is a starting vector (A, B, b, c, sigma_tilde); when omitted a
    regression-based default is used.  ``budget`` counts restarts; the best
    objective value is monotone over restarts by construction.
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    objective = _DemandObjective(ops, asset, n_mc, seed)
    x0 = np.asarray(init, dtype=float) if init is not None else _default_init(ops)
    if x0.shape != (5,):
        raise ValidationError("init must have 5 entries (A, B, b, c, sigma_tilde)")
    scale = np.maximum(np.abs(x0), np.array([1e3, 1.0, 1e-2, 1e2, 1e1]))

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _RESTART_STREAM, 0]))
    best_x, best_val = x0, objective(x0)
    improved = False
    for restart in range(budget):
        start = x0 if restart == 0 else x0 * rng.uniform(0.7, 1.3, size=5)
        res = _nm_minimize(lambda u: objective(u * scale), start / scale,
                           method="Nelder-Mead",
                           options={"maxiter": nm_iters, "xatol": 1e-6, "fatol": 1e-10})
        if res.fun < best_val:
            best_val = float(res.fun)
            best_x = res.x * scale
            improved = True
    if best_val >= 1e30:
        raise NumericalError("demand calibration found no feasible parameters")
    big_a, big_b, b, c, st = (float(v) for v in best_x)
    demand = DemandParams(mu0=big_a / _MONTH_HORIZON, mu1=big_b / _MONTH_HORIZON,
                          sigma_tilde=st, b=b, c=c, s=0.0)
    report = FitReport(
        estimates={"A": big_a, "B": big_b, "b": b, "c": c, "sigma_tilde": st},
        diagnostics={"n_months": len(ops), "restarts": budget, "n_mc": n_mc},
        objective=best_val, converged=improved or best_val < 1e30)
    return demand, report


def synthetic_ops_series(asset: EouParams, demand: DemandParams, n_months: int,
                         seed: int = 0, noise_sd: float = 0.0,
                         x0_range: tuple[float, float] = (35.0, 100.0),
                         n_mc: int = 10_000) -> OpsSeries:
    """Model-generated monthly data for round-trip exercises.

    Each month gets a random starting asset price; the recorded price is the
    per-month newsvendor price and sales follow the demand line plus optional
    Gaussian noise.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), _SERIES_STREAM, 1]))
    x0s = rng.uniform(*x0_range, size=n_months)
    big_a = demand.mu0 * _MONTH_HORIZON
    big_b = demand.mu1 * _MONTH_HORIZON
    months, sales, prices, xbars = [], [], [], []
    grid = PathGrid.for_horizon(_MONTH_HORIZON)
    probe = DemandParams(mu0=0.0, mu1=1.0, sigma_tilde=1.0, b=1.0, c=1.0, s=0.0)
    for i, x0 in enumerate(x0s):
        month_params = EouParams(kappa=asset.kappa, alpha=asset.alpha, sigma=asset.sigma,
                                 x0=float(x0), horizon_t=_MONTH_HORIZON)
        j, zeta = _month_driver(asset, float(x0), n_mc, seed + 1, i)
        samples = big_a + (big_b / _MONTH_HORIZON) * j + demand.sigma_tilde * math.sqrt(
            _MONTH_HORIZON) * zeta
        nv = solve_newsvendor(EmpiricalDist(samples), demand)
        xbar_path = terminal_samples(month_params, probe, grid, 1, seed + 2 + i, REAL,
                                     financial_only=True, stream=_SERIES_STREAM)
        xbar = float(xbar_path[0] / _MONTH_HORIZON)
        s_i = big_a + big_b * xbar - demand.b * nv.p_nv
        if noise_sd > 0.0:
            s_i += noise_sd * rng.standard_normal()
        months.append(f"m{i:03d}")
        sales.append(max(s_i, 0.0))
        prices.append(nv.p_nv)
        xbars.append(xbar)
    return OpsSeries(months=tuple(months), sales=np.array(sales),
                     prices=np.array(prices), x0=x0s, xbar=np.array(xbars))


# -- rank test and dominance --------------------------------------------------

class UTestResult(NamedTuple):
    u: float
    p_value: float


def _midranks(pooled: np.ndarray) -> np.ndarray:
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(pooled.size, dtype=float)
    sorted_vals = pooled[order]
    i = 0
    while i < pooled.size:
        j = i
        while j + 1 < pooled.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _u_statistic(ranks: np.ndarray, n1: int) -> float:
    return float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)


def mann_whitney_u(sample1, sample2, alternative: str) -> UTestResult:
    """One-sided rank-sum test of sample1 against sample2.

    'greater' tests whether sample1 is stochastically larger.  Small samples
    (both sizes below 20, enumeration feasible) get the exact permutation
    p-value; larger ones use the tie-corrected normal approximation with
    continuity correction.  Fully tied data carries no evidence: p = 0.5.
    """
    if alternative not in ("greater", "less"):
        raise ValidationError("alternative must be 'greater' or 'less'")
    a = np.asarray(sample1, dtype=float)
    b = np.asarray(sample2, dtype=float)
    if a.size == 0 or b.size == 0:
        raise ValidationError("samples must be nonempty")
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    u1 = _u_statistic(ranks, n1)

    n = n1 + n2
    exact_ok = (min(n1, n2) < _EXACT_MAX_N and math.comb(n, n1) <= _EXACT_MAX_COMBOS)
    if exact_ok:
        count = 0
        total = 0
        all_idx = range(n)
        for combo in combinations(all_idx, n1):
            u_perm = float(sum(ranks[i] for i in combo) - n1 * (n1 + 1) / 2.0)
            total += 1
            if alternative == "greater" and u_perm >= u1:
                count += 1
            elif alternative == "less" and u_perm <= u1:
                count += 1
        return UTestResult(u=u1, p_value=count / total)

    mu = n1 * n2 / 2.0
    tie_term = 0.0
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(counts.astype(float)**3 - counts))
    var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    if var <= 0.0:
        return UTestResult(u=u1, p_value=0.5)
    sd = math.sqrt(var)
    if alternative == "greater":
        z = (u1 - mu - 0.5) / sd
        p = 1.0 - float(ndtr(z))
    else:
        z = (u1 - mu + 0.5) / sd
        p = float(ndtr(z))
    return UTestResult(u=u1, p_value=p)


@dataclass(frozen=True)
class DominanceReport:
    """Outcome of the two one-sided dominance tests on C_T versus C_T^M."""

    classification: str  # positive | negative | inconclusive
    p_greater: float
    p_less: float
    n: int
    alpha: float


def dominance_report(params: EouParams, demand: DemandParams, grid: PathGrid,
                     n: int = 100_000, seed: int = 0,
                     alpha: float = 0.01) -> DominanceReport:
    """Classify the price trend's impact on demand by simulated dominance tests.

    Simulates the financial demand component under both measures and tests
    C_T stochastically greater / less than its de-trended counterpart.
    """
    c_real = terminal_samples(params, demand, grid, n, seed, REAL, financial_only=True)
    c_neutral = terminal_samples(params, demand, grid, n, seed, RISK_NEUTRAL,
                                 financial_only=True)
    greater = mann_whitney_u(c_real, c_neutral, "greater")
    less = mann_whitney_u(c_real, c_neutral, "less")
    if greater.p_value < alpha:
        cls = "positive"
    elif less.p_value < alpha:
        cls = "negative"
    else:
        cls = "inconclusive"
    return DominanceReport(classification=cls, p_greater=greater.p_value,
                           p_less=less.p_value, n=n, alpha=alpha)
