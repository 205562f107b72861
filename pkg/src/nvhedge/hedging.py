"""Minimum-variance hedging functional for the mean-reverting asset model.

For a target mean return m and a decision (P, R), the minimum achievable
variance of the hedged terminal return splits into two parts:

    B(m, P, R) = (m - V0)^2 / (Z0M - 1)
               + integral_0^T E[ zratio(t, Y_t) * delta_t^2 ] dt

V0 is the expected production payoff under the risk-neutral measure, Z0M is
the second moment of the measure-change density, zratio is a closed-form
exponential-quadratic in the log price, and delta_t is the conditional
demand-noise loading, estimated by nested Monte Carlo: outer real-measure
state paths, inner driftless price continuations.

Because the demand rate is linear in the price, the inner time integral is
affine in the outer state, so one set of inner paths per time index serves
every outer path and every candidate decision (common random numbers).  All
caches are read-only once built; evaluations are deterministic per seed.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import (InternalConsistencyError, NumericalError, ValidationError)
from .newsvendor import Decision, EmpiricalDist, raw_expected_profit
from .processes import (REAL, RISK_NEUTRAL, DemandParams, EouParams, PathGrid,
                        ScenarioSet, simulate_paths, terminal_samples)

_INNER_TAG = 3
_SQRT_2PI = math.sqrt(2.0 * math.pi)

#: demand placeholder for simulations that only need the asset path
_NULL_DEMAND = DemandParams(mu0=0.0, mu1=0.0, sigma_tilde=1.0, b=1.0, c=1.0, s=0.0)


def _npdf(x):
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def _check_angle(kappa: float, tau) -> None:
    if np.any(np.asarray(kappa) * np.asarray(tau) >= math.pi / 4.0):
        raise ValidationError("kappa * tau must stay below pi/4")


@dataclass(frozen=True)
class ClosedForms:
    """Closed-form time functions a, b, f0, f1, f2 of remaining time tau.

    Defined for kappa * tau < pi/4.  At tau = 0: a = 3/2, b = 1 and the f's
    vanish.  f0, f1, f2 solve a Riccati-type ODE system in tau and build the
    density ratio exp(-f0 - f1*y - f2*y^2).
    """

    kappa: float
    alpha: float
    sigma: float

    def _cs(self, tau):
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0.0):
            raise ValidationError("tau must be >= 0")
        _check_angle(self.kappa, tau)
        ang = self.kappa * tau
        return np.cos(ang), np.sin(ang), tau

    def a(self, tau):
        c, s, _ = self._cs(tau)
        return 0.5 + 1.0 / (c - s)

    def b(self, tau):
        c, s, _ = self._cs(tau)
        return (c + s) / (c - s)

    def f0(self, tau):
        c, s, tau = self._cs(tau)
        k, a, sg = self.kappa, self.alpha, self.sigma
        if k > 0.0:
            sin_over = (sg * sg / (2.0 * k)) * s
        else:
            sin_over = 0.5 * sg * sg * tau  # limit of sigma^2 sin(k tau) / (2k)
        quad = (a * a * k / (sg * sg)) * s
        return (-a - (0.5 * k + 0.25 * sg * sg) * tau - 0.5 * np.log(c - s)
                + (a + quad + sin_over) / (c - s))

    def f1(self, tau):
        c, s, _ = self._cs(tau)
        k, a, sg = self.kappa, self.alpha, self.sigma
        return (-1.0 + c - (2.0 * k * a / (sg * sg) + 1.0) * s) / (c - s)

    def f2(self, tau):
        c, s, _ = self._cs(tau)
        return (self.kappa / (self.sigma * self.sigma)) * s / (c - s)

    def log_density_ratio(self, tau, y):
        """-(f0 + f1*y + f2*y^2); the log of Z_t / Z_t^M at remaining time tau."""
        return -(self.f0(tau) + self.f1(tau) * y + self.f2(tau) * y * y)

    def investment_loading(self, tau, y):
        """Coefficient of the gap-closing position per unit price.

        Equals eta/sigma - f1(tau) - 2 f2(tau) y, where eta is the market
        price of risk at log-price y.  This is the (positive) loading
        -zeta_t / Z_t^M times X_t, derived from the density-ratio dynamics;
        it reduces to eta/sigma = 1/2 in the kappa -> 0 limit.
        """
        k, a, sg = self.kappa, self.alpha, self.sigma
        eta_over_sigma = (k / (sg * sg)) * (a - y) + 0.5
        return eta_over_sigma - self.f1(tau) - 2.0 * self.f2(tau) * y


@dataclass(frozen=True)
class NestedMcConfig:
    """Nested Monte Carlo sizes, grid and seed.

    n_outer     real-measure state paths for the time integral
    n_inner     driftless continuations per time point
    n_terminal  terminal market-size samples for the payoff expectations
    """

    n_outer: int = 2000
    n_inner: int = 500
    grid: PathGrid = PathGrid(21, 1.0 / 252.0)
    seed: int = 0
    n_terminal: int = 100_000

    def __post_init__(self):
        for name in ("n_outer", "n_inner", "n_terminal"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v >= 1):
                raise ValidationError(f"{name} must be a positive integer, got {v}")


@dataclass(frozen=True)
class VarianceBreakdown:
    """Squared investment and unhedgeable risks; their sum is the total variance."""

    investment_sq: float
    unhedgeable_sq: float

    @property
    def total(self) -> float:
        return self.investment_sq + self.unhedgeable_sq

    @property
    def risk(self) -> float:
        return math.sqrt(max(self.total, 0.0))


@dataclass(frozen=True)
class HedgeProblem:
    """Target return, expected hedged payoff, density second moment and gap proxy."""

    m: float
    v0: float
    z0m: float
    gamma_m: float

    @classmethod
    def build(cls, m: float, v0: float, z0m: float) -> "HedgeProblem":
        if not z0m > 1.0:
            raise InternalConsistencyError(f"Z0M must exceed 1, got {z0m}")
        return cls(m=m, v0=v0, z0m=z0m, gamma_m=(m * z0m - v0) / (z0m - 1.0))


def closed_forms(params: EouParams) -> ClosedForms:
    """Closed forms for the asset parameters; requires kappa * horizon < pi/4."""
    params.require_hedgeable()
    return ClosedForms(kappa=params.kappa, alpha=params.alpha, sigma=params.sigma)


def z_ratio(t: float, y: float, params: EouParams) -> float:
    """Density ratio Z_t / Z_t^M at time t and log-price y; always in [0, 1]."""
    if not 0.0 <= t <= params.horizon_t:
        raise ValidationError(f"t must lie in [0, {params.horizon_t}], got {t}")
    cf = closed_forms(params)
    val = float(np.exp(cf.log_density_ratio(params.horizon_t - t, y)))
    if val > 1.0 + 1e-9 or val < -1e-9:
        raise InternalConsistencyError(f"density ratio {val} outside [0, 1]")
    return min(max(val, 0.0), 1.0)


def z0m(params: EouParams) -> float:
    """Second moment of the terminal density, exp(f0(T) + f1(T) y0 + f2(T) y0^2)."""
    cf = closed_forms(params)
    y0 = params.y0
    val = float(np.exp(-cf.log_density_ratio(params.horizon_t, y0)))
    if val <= 1.0:
        raise InternalConsistencyError(f"Z0M = {val} should exceed 1")
    return val


def v0(dist_m: EmpiricalDist, d: Decision, demand: DemandParams) -> float:
    """Expected hedged production payoff: the payoff mean over risk-neutral samples."""
    from .newsvendor import expected_profit
    return expected_profit(dist_m, d, demand)


def z_terminal(scenarios: ScenarioSet, params: EouParams) -> np.ndarray:
    """Terminal measure-change density along real-measure scenarios.

    Left-point discretization of exp(-int eta dB - 1/2 int eta^2 dt); its
    mean is exactly 1 in expectation because the stored Brownian increments
    are independent of the running state.
    """
    if scenarios.measure != REAL:
        raise ValidationError("density paths are defined under the real measure")
    from .processes import market_price_of_risk
    eta = market_price_of_risk(scenarios.x[:, :-1], params)
    db = np.diff(scenarios.brownian, axis=1)
    dt = scenarios.grid.dt
    return np.exp(-np.sum(eta * db, axis=1) - 0.5 * np.sum(eta * eta, axis=1) * dt)


def z_moments_mc(params: EouParams, grid: PathGrid, n: int, seed: int):
    """Monte Carlo (mean, second moment) of the terminal density with standard errors."""
    scen = simulate_paths(params, _NULL_DEMAND, grid, n, seed, REAL)
    z = z_terminal(scen, params)
    z2 = z * z
    return (float(z.mean()), float(z.std(ddof=1) / math.sqrt(n)),
            float(z2.mean()), float(z2.std(ddof=1) / math.sqrt(n)))


class HedgeEngine:
    """Workspace caching everything the variance functional needs for one model.

    Holds the outer real-measure paths, one inner continuation set per time
    index, the density-ratio matrix, and empirical terminal distributions
    under both measures.  The second variance term depends on the decision
    only through R and the factor (P - s)^2, so per-R results are memoised.
    """

    def __init__(self, params: EouParams, demand: DemandParams, cfg: NestedMcConfig):
        params.require_hedgeable()
        cfg.grid.check_horizon(params.horizon_t)
        self.params = params
        self.demand = demand
        self.cfg = cfg
        self.grid = cfg.grid
        self.forms = closed_forms(params)
        self.z0m = z0m(params)

        self.outer = simulate_paths(params, demand, cfg.grid, cfg.n_outer, cfg.seed, REAL)
        self.real_dist = EmpiricalDist(
            terminal_samples(params, demand, cfg.grid, cfg.n_terminal, cfg.seed, REAL))
        self.rn_dist = EmpiricalDist(
            terminal_samples(params, demand, cfg.grid, cfg.n_terminal, cfg.seed, RISK_NEUTRAL))

        times = cfg.grid.times
        taus = params.horizon_t - times
        taus[-1] = 0.0
        self._taus = taus
        y = self.outer.y
        logr = self.forms.log_density_ratio(taus[None, :], y)
        self._zr = np.exp(logr)
        if self._zr.max() > 1.0 + 1e-9:
            raise InternalConsistencyError("density ratio exceeded 1 on outer paths")
        self._a_state = self.outer.c + demand.sigma_tilde * self.outer.demand_noise
        self._tails = [self._inner_tail(k) for k in range(cfg.grid.n_steps + 1)]
        self._q2_cache: OrderedDict[float, float] = OrderedDict()

    # -- inner continuations ------------------------------------------------

    def _inner_rng(self, k: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([int(self.cfg.seed), _INNER_TAG, int(k)]))

    def _inner_tail(self, k: int) -> np.ndarray:
        """Trapezoid of a unit-start driftless price over the remaining grid."""
        steps = self.grid.n_steps - k
        n2 = self.cfg.n_inner
        if steps == 0:
            return np.zeros(n2)
        dt = self.grid.dt
        sg = self.params.sigma
        z = self._inner_rng(k).standard_normal((n2, steps))
        logx = np.concatenate([np.zeros((n2, 1)),
                               np.cumsum(-0.5 * sg * sg * dt + sg * math.sqrt(dt) * z, axis=1)],
                              axis=1)
        x = np.exp(logx)
        return np.trapezoid(x, dx=dt, axis=1)

    def _inner_eval(self, k: int, x_states, a_states, r: float,
                    want_xi: bool = False, want_value: bool = False) -> dict:
        """Inner-path averages at time index k for the given outer states.

        Returns per-state arrays: 'g' (mean service-level probability),
        'xi' (price sensitivity factor), 'value' (expected overage).
        """
        dm = self.demand
        tau = self._taus[k]
        x_states = np.asarray(x_states, dtype=float)
        a_states = np.asarray(a_states, dtype=float)
        out: dict[str, np.ndarray] = {}
        if k == self.grid.n_steps:
            diff = r - a_states
            out["g"] = np.where(diff > 0.0, 1.0, np.where(diff < 0.0, 0.0, 0.5))
            if want_xi:
                out["xi"] = np.zeros_like(a_states)
            if want_value:
                out["value"] = np.maximum(diff, 0.0)
            return out
        s_tail = self._tails[k]
        w = a_states[:, None] + dm.mu0 * tau + dm.mu1 * x_states[:, None] * s_tail[None, :]
        v = dm.sigma_tilde * math.sqrt(tau)
        arg = (r - w) / v
        phi = ndtr(arg)
        out["g"] = phi.mean(axis=1)
        if want_xi:
            out["xi"] = (phi * s_tail[None, :]).mean(axis=1)
        if want_value:
            out["value"] = ((r - w) * phi + v * _npdf(arg)).mean(axis=1)
        return out

    # -- variance functional ------------------------------------------------

    def q2(self, r: float) -> float:
        """Decision-independent factor of the unhedgeable term.

        sigma_tilde^2 * trapezoid over t of E[ zratio * Gbar(t, state; r)^2 ],
        where delta_t = sigma_tilde * (P - s) * Gbar.
        """
        return self.q2_with_se(r)[0]

    def q2_with_se(self, r: float) -> tuple[float, float]:
        """q2 plus the outer-path standard error of its Monte Carlo mean."""
        r = float(r)
        cached = self._q2_cache.get(r)
        if cached is not None:
            return cached
        K = self.grid.n_steps
        n1 = self.cfg.n_outer
        per_path = np.zeros(n1)
        weights = np.full(K + 1, self.grid.dt)
        weights[0] = weights[-1] = 0.5 * self.grid.dt
        for k in range(K + 1):
            g = self._inner_eval(k, self.outer.x[:, k], self._a_state[:, k], r)["g"]
            per_path += weights[k] * self._zr[:, k] * g * g
        scale = self.demand.sigma_tilde ** 2
        value = scale * float(per_path.mean())
        se = scale * float(per_path.std(ddof=1) / math.sqrt(n1))
        self._q2_cache[r] = (value, se)
        if len(self._q2_cache) > 4096:
            self._q2_cache.popitem(last=False)
        return value, se

    def v0_quadratic(self, r: float):
        """Coefficients (qa, qb, qc) of V0(P, r) = qa P^2 + qb P + qc."""
        dm = self.demand
        over = self.rn_dist.exp_overage(r)
        qa = -dm.b
        qb = r + dm.b * dm.c - over
        qc = -(dm.c * r - dm.s * over)
        return qa, qb, qc

    def v0(self, p: float, r: float) -> float:
        return float(raw_expected_profit(self.rn_dist, p, r, self.demand))

    def p_argmax_v0(self, r: float) -> float:
        _, qb, _ = self.v0_quadratic(r)
        return qb / (2.0 * self.demand.b)

    def p_bar(self, r: float, m: float) -> float:
        """Smallest price with V0(P, r) = m, or the V0-maximizing price if none."""
        qa, qb, qc = self.v0_quadratic(r)
        disc = qb * qb - 4.0 * self.demand.b * (m - qc)
        if disc < 0.0:
            return qb / (2.0 * self.demand.b)
        return (qb - math.sqrt(disc)) / (2.0 * self.demand.b)

    def variance(self, m: float, p: float, r: float) -> VarianceBreakdown:
        inv = (m - self.v0(p, r)) ** 2 / (self.z0m - 1.0)
        unh = (p - self.demand.s) ** 2 * self.q2(r)
        return VarianceBreakdown(investment_sq=float(inv), unhedgeable_sq=float(unh))

    def variance_se(self, m: float, p: float, r: float) -> tuple[float, float]:
        """Standard errors of the two variance terms (terminal-sample and outer-path)."""
        v0_val = self.v0(p, r)
        overage = np.maximum(r - self.rn_dist.samples, 0.0)
        payoff = ((p - self.demand.c) * (r - self.demand.b * p)
                  - (p - self.demand.s) * overage)
        v0_se = float(payoff.std(ddof=1) / math.sqrt(self.rn_dist.n))
        inv_se = 2.0 * abs(m - v0_val) * v0_se / (self.z0m - 1.0)
        _, q2_se = self.q2_with_se(r)
        unh_se = (p - self.demand.s) ** 2 * q2_se
        return inv_se, unh_se

    # -- path-wise sensitivities ---------------------------------------------

    def path_sensitivities(self, scenarios: ScenarioSet, d: Decision):
        """delta and xi along the given scenarios, shape (n, n_steps + 1) each."""
        if scenarios.grid != self.grid:
            raise ValidationError("scenarios were simulated on a different grid")
        dm = self.demand
        a_state = scenarios.c + dm.sigma_tilde * scenarios.demand_noise
        n = len(scenarios)
        K = self.grid.n_steps
        delta = np.empty((n, K + 1))
        xi = np.empty((n, K + 1))
        for k in range(K + 1):
            ev = self._inner_eval(k, scenarios.x[:, k], a_state[:, k], d.r, want_xi=True)
            delta[:, k] = dm.sigma_tilde * (d.p - dm.s) * ev["g"]
            xi[:, k] = (d.p - dm.s) * dm.mu1 * ev["xi"]
        return delta, xi


_ENGINES: OrderedDict[tuple, HedgeEngine] = OrderedDict()


def get_engine(params: EouParams, demand: DemandParams, cfg: NestedMcConfig) -> HedgeEngine:
    """Engine for (params, demand, cfg), cached so repeat calls share all noise."""
    key = (params, demand, cfg)
    engine = _ENGINES.get(key)
    if engine is None:
        engine = HedgeEngine(params, demand, cfg)
        _ENGINES[key] = engine
        if len(_ENGINES) > 8:
            _ENGINES.popitem(last=False)
    return engine


def variance_B(m: float, d: Decision, params: EouParams, demand: DemandParams,
               cfg: NestedMcConfig) -> VarianceBreakdown:
    """Minimum hedged variance at target mean m and decision d."""
    if not math.isfinite(m):
        raise ValidationError("target return must be finite")
    engine = get_engine(params, demand, cfg)
    return engine.variance(m, d.p, d.r)


def _tail_point(t: float, x: float, a_partial: float, d: Decision,
                params: EouParams, demand: DemandParams, cfg: NestedMcConfig,
                want_xi: bool):
    """Shared scalar evaluation of the conditional loadings at an arbitrary state."""
    T = params.horizon_t
    if not 0.0 <= t < T:
        raise ValidationError(f"t must lie in [0, {T}), got {t}")
    if not (math.isfinite(x) and x > 0.0):
        raise ValidationError("price state must be finite and > 0")
    dt = cfg.grid.dt
    k_idx = int(round(t / dt))
    on_grid = abs(t - k_idx * dt) <= 1e-9 * max(T, 1.0) and 0 <= k_idx < cfg.grid.n_steps
    if on_grid:
        steps = cfg.grid.n_steps - k_idx
        dt_tail = dt
    else:
        steps = max(1, round((T - t) / dt))
        dt_tail = (T - t) / steps
    tau = T - t
    sg = params.sigma
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), _INNER_TAG, int(k_idx)]))
    z = rng.standard_normal((cfg.n_inner, steps))
    logx = np.concatenate([np.zeros((cfg.n_inner, 1)),
                           np.cumsum(-0.5 * sg * sg * dt_tail + sg * math.sqrt(dt_tail) * z,
                                     axis=1)], axis=1)
    s_tail = np.trapezoid(np.exp(logx), dx=dt_tail, axis=1)
    w = a_partial + demand.mu0 * tau + demand.mu1 * x * s_tail
    v = demand.sigma_tilde * math.sqrt(tau)
    phi = ndtr((d.r - w) / v)
    if want_xi:
        return float((d.p - demand.s) * demand.mu1 * np.mean(phi * s_tail))
    return float(demand.sigma_tilde * (d.p - demand.s) * np.mean(phi))


def delta_t(t: float, x: float, a_partial: float, d: Decision, params: EouParams,
            demand: DemandParams, cfg: NestedMcConfig) -> float:
    """Conditional demand-noise loading sigma_tilde (P - s) P^M(A_T <= R | state)."""
    return _tail_point(t, x, a_partial, d, params, demand, cfg, want_xi=False)


def xi_t(t: float, x: float, a_partial: float, d: Decision, params: EouParams,
         demand: DemandParams, cfg: NestedMcConfig) -> float:
    """Price sensitivity of the projected payoff at the given state."""
    return _tail_point(t, x, a_partial, d, params, demand, cfg, want_xi=True)
