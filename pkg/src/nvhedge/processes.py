"""Asset-price and market-size path simulation.

The asset price is an exponential Ornstein-Uhlenbeck process: X_t = exp(Y_t)
with dY_t = kappa * (alpha - Y_t) dt + sigma dB_t.  Under the risk-neutral
measure the price is a driftless geometric Brownian motion started at x0.
The market size accumulates a linear function of the price plus independent
Gaussian demand noise:

    A_T = integral_0^T (mu0 + mu1 * X_t) dt + sigma_tilde * Btilde_T.

Transitions are sampled exactly (no Euler bias).  On the real measure the
log-price innovation and the driving Brownian increment are drawn jointly
with their exact covariance, so the Brownian path stored on each scenario is
consistent with the log-price path.

Randomness is organised in fixed-size chunks of scenarios.  Chunk k of a run
uses the stream ``SeedSequence([seed, measure_code, k])``, so scenario i's
draws depend only on (seed, measure, i); results are invariant to how chunks
are distributed over workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import KappaHorizonError, ValidationError

REAL = "real"
RISK_NEUTRAL = "risk_neutral"

_MEASURE_CODE = {REAL: 1, RISK_NEUTRAL: 2}

#: scenarios per RNG chunk; fixed so draws are addressable by scenario index
CHUNK = 8192


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ValidationError(msg)


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class EouParams:
    """Exponential Ornstein-Uhlenbeck asset model and selling horizon.

    kappa      mean-reversion rate of the log price (1/year)
    alpha      long-run mean of the log price
    sigma      log-price volatility (1/sqrt(year))
    x0         initial asset price
    horizon_t  selling-period length (years)
    """

    kappa: float
    alpha: float
    sigma: float
    x0: float
    horizon_t: float

    def __post_init__(self):
        _require(_finite(self.kappa, self.alpha, self.sigma, self.x0, self.horizon_t),
                 "asset parameters must be finite")
        _require(self.kappa >= 0.0, f"kappa must be >= 0, got {self.kappa}")
        _require(self.sigma > 0.0, f"sigma must be > 0, got {self.sigma}")
        _require(self.x0 > 0.0, f"x0 must be > 0, got {self.x0}")
        _require(self.horizon_t > 0.0, f"horizon_t must be > 0, got {self.horizon_t}")

    @property
    def y0(self) -> float:
        return math.log(self.x0)

    def trend_neutral_price(self) -> float:
        """Price level at which the drift of X vanishes: exp(alpha + sigma^2 / (2 kappa)).

        Undefined for kappa = 0 (the drift sigma^2/2 * X never vanishes).
        """
        _require(self.kappa > 0.0, "trend-neutral price requires kappa > 0")
        return math.exp(self.alpha + self.sigma**2 / (2.0 * self.kappa))

    def stationary_price_mean(self) -> float:
        """Mean of the stationary price distribution: exp(alpha + sigma^2 / (4 kappa))."""
        _require(self.kappa > 0.0, "stationary mean requires kappa > 0")
        return math.exp(self.alpha + self.sigma**2 / (4.0 * self.kappa))

    def require_hedgeable(self) -> None:
        """Raise unless kappa * horizon_t < pi/4 (needed by the hedging closed forms)."""
        if self.kappa * self.horizon_t >= math.pi / 4.0:
            raise KappaHorizonError(
                f"kappa * horizon = {self.kappa * self.horizon_t:.6f} >= pi/4; "
                "hedging closed forms are undefined")


@dataclass(frozen=True)
class DemandParams:
    """Linear demand-rate model and newsvendor economics.

    mu0          baseline demand rate (units/year)
    mu1          asset-price sensitivity of the demand rate (units/year per currency)
    sigma_tilde  non-financial demand volatility (units/sqrt(year))
    b            price sensitivity of demand (units per currency)
    c            unit production cost
    s            unit salvage value
    """

    mu0: float
    mu1: float
    sigma_tilde: float
    b: float
    c: float
    s: float = 0.0

    def __post_init__(self):
        _require(_finite(self.mu0, self.mu1, self.sigma_tilde, self.b, self.c, self.s),
                 "demand parameters must be finite")
        _require(self.b > 0.0, f"b must be > 0, got {self.b}")
        _require(self.sigma_tilde > 0.0, f"sigma_tilde must be > 0, got {self.sigma_tilde}")
        _require(self.c > self.s >= 0.0, f"need c > s >= 0, got c={self.c}, s={self.s}")

    def rate(self, x):
        """Demand rate mu0 + mu1 * x."""
        return self.mu0 + self.mu1 * np.asarray(x, dtype=float)


@dataclass(frozen=True)
class PathGrid:
    """Uniform time grid with n_steps steps of size dt."""

    n_steps: int
    dt: float

    def __post_init__(self):
        _require(isinstance(self.n_steps, int) and self.n_steps >= 1,
                 f"n_steps must be a positive integer, got {self.n_steps}")
        _require(math.isfinite(self.dt) and self.dt > 0.0, f"dt must be > 0, got {self.dt}")

    @classmethod
    def for_horizon(cls, horizon_t: float, dt: float = 1.0 / 252.0) -> "PathGrid":
        """Grid covering [0, horizon_t] with steps as close to dt as possible."""
        _require(math.isfinite(horizon_t) and horizon_t > 0, "horizon_t must be > 0")
        n = max(1, round(horizon_t / dt))
        return cls(n_steps=n, dt=horizon_t / n)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def check_horizon(self, horizon_t: float) -> None:
        if abs(self.horizon - horizon_t) > 1e-12 * max(1.0, abs(horizon_t)):
            raise ValidationError(
                f"grid covers {self.horizon!r} years but the horizon is {horizon_t!r}")


@dataclass(frozen=True)
class MarketScenario:
    """One simulated path bundle under a stated measure.

    x_path, y_path       price and log-price on the grid
    a_path               cumulative financial demand component C_t
    demand_noise_path    the non-financial Brownian path Btilde_t
    brownian_path        the Brownian path B_t driving the asset
    a_terminal           terminal market size A_T = C_T + sigma_tilde * Btilde_T
    """

    measure: str
    x_path: np.ndarray
    y_path: np.ndarray
    a_path: np.ndarray
    demand_noise_path: np.ndarray
    brownian_path: np.ndarray
    a_terminal: float


class ScenarioSet:
    """A batch of scenarios stored column-wise; behaves as a sequence of MarketScenario.

    Arrays have shape (n, n_steps + 1) and are read-only.
    """

    def __init__(self, measure, grid, x, y, c, demand_noise, brownian, a_terminal):
        self.measure = measure
        self.grid = grid
        self.x = x
        self.y = y
        self.c = c
        self.demand_noise = demand_noise
        self.brownian = brownian
        self.a_terminal = a_terminal
        for arr in (x, y, c, demand_noise, brownian, a_terminal):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> MarketScenario:
        return MarketScenario(
            measure=self.measure,
            x_path=self.x[i],
            y_path=self.y[i],
            a_path=self.c[i],
            demand_noise_path=self.demand_noise[i],
            brownian_path=self.brownian[i],
            a_terminal=float(self.a_terminal[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def c_terminal(self) -> np.ndarray:
        """Terminal values of the financial demand component C_T."""
        return self.c[:, -1]


def _chunk_streams(seed: int, measure: str, n: int, stream: int):
    """Yield (start, size, Generator) triples covering n scenarios."""
    code = _MEASURE_CODE[measure]
    start = 0
    k = 0
    while start < n:
        size = min(CHUNK, n - start)
        rng = np.random.default_rng(
            np.random.SeedSequence([int(seed), code, int(stream), k]))
        yield start, size, rng
        start += size
        k += 1


def _simulate_chunk(params, demand, grid, size, rng, measure):
    """Simulate one chunk; returns dict of (size, K+1) arrays plus terminals."""
    K = grid.n_steps
    dt = grid.dt
    kappa, alpha, sigma = params.kappa, params.alpha, params.sigma
    sqdt = math.sqrt(dt)

    y = np.empty((size, K + 1))
    y[:, 0] = params.y0
    brownian = np.zeros((size, K + 1))
    if measure == REAL:
        z = rng.standard_normal((3, size, K))
        z1, z2, zd = z[0], z[1], z[2]
        if kappa > 0.0:
            decay = math.exp(-kappa * dt)
            var_innov = sigma**2 * (1.0 - math.exp(-2.0 * kappa * dt)) / (2.0 * kappa)
            cov = sigma * (1.0 - decay) / kappa          # Cov(dB, innovation)
            c1 = cov / sqdt
            c2 = math.sqrt(max(var_innov - c1 * c1, 0.0))
            innov = c1 * z1 + c2 * z2
            for k in range(K):
                y[:, k + 1] = alpha + (y[:, k] - alpha) * decay + innov[:, k]
        else:
            innov = sigma * sqdt * z1
            for k in range(K):
                y[:, k + 1] = y[:, k] + innov[:, k]
        np.cumsum(sqdt * z1, axis=1, out=brownian[:, 1:])
    elif measure == RISK_NEUTRAL:
        z = rng.standard_normal((2, size, K))
        z1, zd = z[0], z[1]
        drift = -0.5 * sigma**2 * dt
        vol = sigma * sqdt
        np.cumsum(drift + vol * z1, axis=1, out=y[:, 1:])
        y[:, 1:] += params.y0
        np.cumsum(sqdt * z1, axis=1, out=brownian[:, 1:])
    else:
        raise ValidationError(f"unknown measure {measure!r}")

    x = np.exp(y)
    rate = demand.rate(x)
    c = np.zeros((size, K + 1))
    np.cumsum(0.5 * dt * (rate[:, :-1] + rate[:, 1:]), axis=1, out=c[:, 1:])
    demand_noise = np.zeros((size, K + 1))
    np.cumsum(sqdt * zd, axis=1, out=demand_noise[:, 1:])
    a_terminal = c[:, -1] + demand.sigma_tilde * demand_noise[:, -1]
    return x, y, c, demand_noise, brownian, a_terminal


def simulate_paths(params: EouParams, demand: DemandParams, grid: PathGrid,
                   n: int, seed: int, measure: str = REAL,
                   stream: int = 0) -> ScenarioSet:
    """Simulate n scenarios of (X_t, Y_t, C_t, Btilde_t) on the grid.

    Deterministic for fixed (seed, params, demand, grid, measure, stream);
    ``stream`` separates independent scenario families under one seed.
    """
    _require(isinstance(n, int) and n >= 1, f"n must be a positive integer, got {n}")
    _require(measure in _MEASURE_CODE, f"measure must be one of {sorted(_MEASURE_CODE)}")
    grid.check_horizon(params.horizon_t)

    K = grid.n_steps
    x = np.empty((n, K + 1))
    y = np.empty((n, K + 1))
    c = np.empty((n, K + 1))
    demand_noise = np.empty((n, K + 1))
    brownian = np.empty((n, K + 1))
    a_terminal = np.empty(n)
    for start, size, rng in _chunk_streams(seed, measure, n, stream):
        sl = slice(start, start + size)
        out = _simulate_chunk(params, demand, grid, size, rng, measure)
        x[sl], y[sl], c[sl], demand_noise[sl], brownian[sl], a_terminal[sl] = out
    return ScenarioSet(measure, grid, x, y, c, demand_noise, brownian, a_terminal)


def terminal_samples(params: EouParams, demand: DemandParams, grid: PathGrid,
                     n: int, seed: int, measure: str = REAL,
                     financial_only: bool = False, stream: int = 0) -> np.ndarray:
    """Terminal A_T (or C_T) samples without retaining full paths.

    Bit-identical to ``terminal_market_samples(simulate_paths(...))`` for the
    same arguments; chunks are discarded as they are produced, so this scales
    to large n.
    """
    _require(isinstance(n, int) and n >= 1, f"n must be a positive integer, got {n}")
    _require(measure in _MEASURE_CODE, f"measure must be one of {sorted(_MEASURE_CODE)}")
    grid.check_horizon(params.horizon_t)
    out = np.empty(n)
    for start, size, rng in _chunk_streams(seed, measure, n, stream):
        x, y, c, dn, bw, a_term = _simulate_chunk(params, demand, grid, size, rng, measure)
        out[start:start + size] = c[:, -1] if financial_only else a_term
    return out


def market_price_of_risk(x, params: EouParams):
    """Risk-adjusted trend of the asset price at level x.

    Equals (kappa/sigma) * (alpha + sigma^2/(2 kappa) - log x); written with
    the sigma/2 split out so kappa = 0 degrades to the constant sigma/2.
    """
    xv = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xv)) or np.any(xv <= 0.0):
        raise ValidationError("price must be finite and > 0")
    out = (params.kappa / params.sigma) * (params.alpha - np.log(xv)) + 0.5 * params.sigma
    return float(out) if np.isscalar(x) else out


def terminal_market_samples(scenarios) -> np.ndarray:
    """Extract A_T from a ScenarioSet or an iterable of MarketScenario.

    All scenarios must share one measure.
    """
    if isinstance(scenarios, ScenarioSet):
        _require(len(scenarios) > 0, "no scenarios given")
        return np.array(scenarios.a_terminal, dtype=float)
    scenarios = list(scenarios)
    _require(len(scenarios) > 0, "no scenarios given")
    measures = {s.measure for s in scenarios}
    _require(len(measures) == 1, f"scenarios mix measures {sorted(measures)}")
    return np.array([s.a_terminal for s in scenarios], dtype=float)
