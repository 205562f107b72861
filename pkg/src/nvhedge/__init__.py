"""Joint pricing, production and dynamic hedging for a price-setting newsvendor."""

from .calibration_stats import (DominanceReport, FitReport, OpsSeries, PriceSeries,
                                UTestResult, calibrate_demand, dominance_report,
                                fit_eou, mann_whitney_u)
from .errors import (AssumptionViolationError, DegenerateInputError,
                     InternalConsistencyError, KappaHorizonError, NotApplicableError,
                     NumericalError, NvHedgeError, ValidationError)
from .hedging import (ClosedForms, HedgeProblem, NestedMcConfig, VarianceBreakdown,
                      closed_forms, delta_t, v0, variance_B, xi_t, z0m, z_ratio)
from .newsvendor import (AssumptionReport, Decision, EmpiricalDist, FrontierPoint,
                         NvSolution, check_assumptions, expected_profit,
                         frontier_no_hedge, payoff_variance,
                         risk_decomposition_no_hedge, solve_newsvendor)
from .optimizer import (BoundsReport, HurtingCondition, compute_r_circ,
                        efficient_frontier, hurting_condition, minimize_B,
                        risk_neutral_newsvendor)
from .processes import (REAL, RISK_NEUTRAL, DemandParams, EouParams, MarketScenario,
                        PathGrid, ScenarioSet, market_price_of_risk, simulate_paths,
                        terminal_market_samples)
from .strategy import (DecomposedRisk, StrategyEnsemble, StrategyPath, decompose_risk,
                       simulate_strategy)

__version__ = "0.1.0"
