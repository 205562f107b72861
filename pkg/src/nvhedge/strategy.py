"""Path-wise simulation of the optimal hedging strategy.

The holding at time t combines a risk-mitigation leg -xi_t (cancelling the
price-driven part of the production payoff) and an investment leg

    iota_t = loading(tau, Y_t) / X_t * (gamma_m - V_t - chi_t),

where gamma_m = (m Z0M - V0) / (Z0M - 1), V_t is the projected payoff and
chi_t the running hedge P&L.  The loading comes from the density-ratio
dynamics (see ClosedForms.investment_loading).  V_t and xi_t are estimated
at every grid point by the same inner continuations the variance functional
uses, so simulated moments are directly comparable with its output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InternalConsistencyError, ValidationError
from .hedging import HedgeProblem, NestedMcConfig, get_engine
from .newsvendor import Decision
from .processes import REAL, DemandParams, EouParams, simulate_paths

_STRATEGY_TAG = 4


@dataclass(frozen=True)
class StrategyPath:
    """One simulated hedge path.

    theta    per-step holdings (constant over each step)
    chi      cumulative hedge P&L at T, chi = chi_rm + chi_iv
    v_t      projected payoff at every grid point (last entry realized)
    """

    theta: np.ndarray
    chi: float
    chi_rm: float
    chi_iv: float
    v_t: np.ndarray
    terminal_wealth: float


class StrategyEnsemble:
    """Column-wise storage of simulated strategy paths; iterable as StrategyPath."""

    def __init__(self, theta, v_t, chi, chi_rm, chi_iv, payoff, brownian_terminal,
                 problem: HedgeProblem):
        self.theta = theta
        self.v_t = v_t
        self.chi = chi
        self.chi_rm = chi_rm
        self.chi_iv = chi_iv
        self.payoff = payoff
        self.brownian_terminal = brownian_terminal
        self.problem = problem
        self.terminal_wealth = payoff + chi
        self.hedged_payoff = payoff + chi_rm

    def __len__(self) -> int:
        return self.theta.shape[0]

    def __getitem__(self, i: int) -> StrategyPath:
        return StrategyPath(theta=self.theta[i], chi=float(self.chi[i]),
                            chi_rm=float(self.chi_rm[i]), chi_iv=float(self.chi_iv[i]),
                            v_t=self.v_t[i], terminal_wealth=float(self.terminal_wealth[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))


@dataclass(frozen=True)
class DecomposedRisk:
    """Sample estimates of the two risk components with standard errors."""

    investment_risk: float
    unhedgeable_risk: float
    investment_sq: float
    unhedgeable_sq: float
    investment_sq_se: float
    unhedgeable_sq_se: float

    def __iter__(self):
        return iter((self.investment_risk, self.unhedgeable_risk))


def simulate_strategy(d: Decision, m: float, params: EouParams, demand: DemandParams,
                      cfg: NestedMcConfig, n_paths: int,
                      scenarios=None) -> StrategyEnsemble:
    """Run the optimal strategy on n_paths fresh real-measure scenarios.

    Pass ``scenarios`` to reuse an existing real-measure ScenarioSet on the
    configured grid (e.g. for coupled discretization comparisons); n_paths
    is ignored in that case.
    """
    engine = get_engine(params, demand, cfg)
    problem = HedgeProblem.build(m=m, v0=engine.v0(d.p, d.r), z0m=engine.z0m)

    if scenarios is not None:
        if scenarios.measure != REAL:
            raise ValidationError("strategy scenarios must be real-measure")
        if scenarios.grid != cfg.grid:
            raise ValidationError("scenarios were simulated on a different grid")
        scen = scenarios
        n_paths = len(scen)
        if n_paths < 2:
            raise ValidationError("need at least two scenarios")
    else:
        if not (isinstance(n_paths, int) and n_paths >= 2):
            raise ValidationError(f"n_paths must be an integer >= 2, got {n_paths}")
        scen = simulate_paths(params, demand, cfg.grid, n_paths, cfg.seed, REAL,
                              stream=_STRATEGY_TAG)
    a_state = scen.c + demand.sigma_tilde * scen.demand_noise
    K = cfg.grid.n_steps

    forms = engine.forms
    taus = engine._taus
    chi = np.zeros(n_paths)
    chi_rm = np.zeros(n_paths)
    chi_iv = np.zeros(n_paths)
    theta = np.empty((n_paths, K))
    v_t = np.empty((n_paths, K + 1))

    margin = (d.p - demand.c) * (d.r - demand.b * d.p)
    for k in range(K):
        ev = engine._inner_eval(k, scen.x[:, k], a_state[:, k], d.r,
                                want_xi=True, want_value=True)
        v_k = margin - (d.p - demand.s) * ev["value"]
        xi_k = (d.p - demand.s) * demand.mu1 * ev["xi"]
        loading = forms.investment_loading(taus[k], scen.y[:, k]) / scen.x[:, k]
        iota = loading * (problem.gamma_m - v_k - chi)
        theta_k = -xi_k + iota
        dx = scen.x[:, k + 1] - scen.x[:, k]
        chi += theta_k * dx
        chi_rm += -xi_k * dx
        chi_iv += iota * dx
        theta[:, k] = theta_k
        v_t[:, k] = v_k

    payoff = margin - (d.p - demand.s) * np.maximum(d.r - scen.a_terminal, 0.0)
    v_t[:, K] = payoff
    return StrategyEnsemble(theta=theta, v_t=v_t, chi=chi, chi_rm=chi_rm,
                            chi_iv=chi_iv, payoff=payoff,
                            brownian_terminal=np.array(scen.brownian[:, -1]),
                            problem=problem)


def _cov_statistic(x, y):
    """mean-free estimate of Cov(x, x + y) = Var(x) + Cov(x, y) with a standard error."""
    n = x.size
    u = (x - x.mean()) * ((x + y) - (x + y).mean())
    est = float(u.sum() / (n - 1))
    se = float(u.std(ddof=1) / math.sqrt(n))
    return est, se


def decompose_risk(ensemble: StrategyEnsemble) -> DecomposedRisk:
    """Split the simulated total variance into investment and unhedgeable parts.

    investment^2  = Var(chi_iv) + Cov(chi_iv, hedged payoff)
    unhedgeable^2 = Var(hedged payoff) + Cov(chi_iv, hedged payoff)

    The two add up to the sample variance of terminal wealth exactly.
    """
    inv_sq, inv_se = _cov_statistic(ensemble.chi_iv, ensemble.hedged_payoff)
    unh_sq, unh_se = _cov_statistic(ensemble.hedged_payoff, ensemble.chi_iv)
    for name, est, se in (("investment", inv_sq, inv_se), ("unhedgeable", unh_sq, unh_se)):
        if est < -3.0 * se:
            raise InternalConsistencyError(
                f"estimated squared {name} risk {est:.6g} is negative beyond noise")
    return DecomposedRisk(investment_risk=math.sqrt(max(inv_sq, 0.0)),
                          unhedgeable_risk=math.sqrt(max(unh_sq, 0.0)),
                          investment_sq=inv_sq, unhedgeable_sq=unh_sq,
                          investment_sq_se=inv_se, unhedgeable_sq_se=unh_se)
