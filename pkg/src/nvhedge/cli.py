"""Command-line workbench: calibrate, solve, optimize, simulate.

Configuration is a flat ``key = value`` text file; unknown keys are errors.
Numeric results are written as JSON and CSV files into the output directory,
every CSV starting with a comment line carrying the config hash and seed so
runs are traceable.  Exit codes: 0 ok, 2 validation error, 3 assumption
violation, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import calibration_stats as cal
from . import hedging, newsvendor, optimizer, processes, strategy
from .errors import NvHedgeError, ValidationError

_CONFIG_KEYS = {
    "kappa", "alpha", "sigma", "prices_csv",
    "mu0", "mu1", "sigma_tilde", "b", "c", "s", "ops_csv",
    "x0", "horizon_t", "m",
    "n_outer", "n_inner", "n_steps", "n_terminal", "seed", "threads",
    "out_dir", "cal_budget", "cal_n_mc",
}
_ASSET_KEYS = ("kappa", "alpha", "sigma")
_DEMAND_KEYS = ("mu0", "mu1", "sigma_tilde", "b", "c")

_DEFAULTS = {
    "horizon_t": 1.0 / 12.0,
    "s": 0.0,
    "n_outer": 2000,
    "n_inner": 500,
    "n_terminal": 100_000,
    "threads": 1,
    "m": "nvmax",
    "out_dir": ".",
    "cal_budget": 20,
    "cal_n_mc": 10_000,
}


def load_config(path: str) -> dict:
    """Parse a flat key=value config file; unknown keys fail fast."""
    cfg = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
        if key in cfg:
            raise ValidationError(f"{path}:{lineno}: duplicate key {key!r}")
        cfg[key] = value
    return cfg


def _as_float(cfg: dict, key: str):
    try:
        return float(cfg[key])
    except (KeyError, ValueError):
        raise ValidationError(f"config key {key!r} must be a number") from None


def _as_int(cfg: dict, key: str):
    try:
        return int(cfg[key])
    except (KeyError, ValueError):
        raise ValidationError(f"config key {key!r} must be an integer") from None


class Workbench:
    """Resolved configuration plus lazily-built model objects."""

    def __init__(self, cfg: dict):
        self.raw = dict(cfg)
        merged = {**{k: str(v) for k, v in _DEFAULTS.items()}, **cfg}
        self.merged = merged
        if "seed" not in cfg:
            raise ValidationError("config must set a seed")
        self.seed = _as_int(merged, "seed")
        self.threads = _as_int(merged, "threads")
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        self.out_dir = Path(merged["out_dir"])
        self.horizon_t = _as_float(merged, "horizon_t")

        self.asset_report = None
        self.demand_report = None
        self.params = self._resolve_asset(merged)
        self.demand = self._resolve_demand(merged)
        if "n_steps" in merged:
            n_steps = _as_int(merged, "n_steps")
            self.grid = processes.PathGrid(n_steps, self.horizon_t / n_steps)
        else:
            self.grid = processes.PathGrid.for_horizon(self.horizon_t)
        self.mc = hedging.NestedMcConfig(
            n_outer=_as_int(merged, "n_outer"), n_inner=_as_int(merged, "n_inner"),
            grid=self.grid, seed=self.seed, n_terminal=_as_int(merged, "n_terminal"))
        self.m_spec = merged["m"]

    def _resolve_asset(self, cfg: dict) -> processes.EouParams:
        has_literal = [k for k in _ASSET_KEYS if k in cfg]
        if "x0" not in cfg:
            raise ValidationError("config must set x0 (initial asset price)")
        x0 = _as_float(cfg, "x0")
        if "prices_csv" in cfg:
            if has_literal:
                raise ValidationError(
                    f"asset group is double-sourced: prices_csv and {has_literal}")
            series = read_price_csv(cfg["prices_csv"])
            fitted, self.asset_report = cal.fit_eou(series, horizon_t=self.horizon_t)
            return processes.EouParams(kappa=fitted.kappa, alpha=fitted.alpha,
                                       sigma=fitted.sigma, x0=x0,
                                       horizon_t=self.horizon_t)
        missing = [k for k in _ASSET_KEYS if k not in cfg]
        if missing:
            raise ValidationError(f"asset group incomplete, missing {missing}")
        return processes.EouParams(kappa=_as_float(cfg, "kappa"),
                                   alpha=_as_float(cfg, "alpha"),
                                   sigma=_as_float(cfg, "sigma"),
                                   x0=x0, horizon_t=self.horizon_t)

    def _resolve_demand(self, cfg: dict) -> processes.DemandParams:
        has_literal = [k for k in _DEMAND_KEYS if k in cfg]
        if "ops_csv" in cfg:
            if has_literal:
                raise ValidationError(
                    f"demand group is double-sourced: ops_csv and {has_literal}")
            ops = read_ops_csv(cfg["ops_csv"])
            fitted, self.demand_report = cal.calibrate_demand(
                ops, self.params, budget=_as_int(cfg, "cal_budget"),
                n_mc=_as_int(cfg, "cal_n_mc"), seed=self.seed)
            return fitted
        missing = [k for k in _DEMAND_KEYS if k not in cfg]
        if missing:
            raise ValidationError(f"demand group incomplete, missing {missing}")
        return processes.DemandParams(
            mu0=_as_float(cfg, "mu0"), mu1=_as_float(cfg, "mu1"),
            sigma_tilde=_as_float(cfg, "sigma_tilde"), b=_as_float(cfg, "b"),
            c=_as_float(cfg, "c"), s=_as_float(cfg, "s"))

    # -- shared helpers -----------------------------------------------------

    def config_hash(self) -> str:
        payload = json.dumps(self.merged, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    def engine(self) -> hedging.HedgeEngine:
        return hedging.get_engine(self.params, self.demand, self.mc)

    def nv_max_profit(self) -> float:
        nv = newsvendor.solve_newsvendor(self.engine().real_dist, self.demand)
        return nv.profit

    def resolve_m(self, override: str | None = None) -> float:
        spec = override if override is not None else self.m_spec
        if spec == "nvmax":
            return self.nv_max_profit()
        m = float(spec)
        if 0.0 < m <= 1.0:
            return m * self.nv_max_profit()
        return m

    def write_json(self, name: str, payload: dict) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        body = dict(payload)
        body["config"] = self.config_hash()
        body["seed"] = self.seed
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path

    def write_csv(self, name: str, header: list[str], rows: list[list]) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        with path.open("w", newline="") as fh:
            fh.write(f"# config={self.config_hash()} seed={self.seed}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        return path


def read_price_csv(path: str) -> cal.PriceSeries:
    """CSV schema: date,price with an ISO date column."""
    dates, prices = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(_strip_comments(fh)):
            if row.get("date") is None or row.get("price") is None:
                raise ValidationError(f"{path}: expected columns date,price")
            dates.append(dt.date.fromisoformat(row["date"].strip()))
            prices.append(float(row["price"]))
    if not dates:
        raise ValidationError(f"{path}: no data rows")
    return cal.PriceSeries(dates=tuple(dates), prices=np.array(prices))


def read_ops_csv(path: str) -> cal.OpsSeries:
    """CSV schema: month,sales,price,x0,xbar."""
    cols = {"month": [], "sales": [], "price": [], "x0": [], "xbar": []}
    with open(path, newline="") as fh:
        for row in csv.DictReader(_strip_comments(fh)):
            for key in cols:
                if row.get(key) is None:
                    raise ValidationError(f"{path}: expected columns {','.join(cols)}")
            cols["month"].append(row["month"].strip())
            for key in ("sales", "price", "x0", "xbar"):
                cols[key].append(float(row[key]))
    if not cols["month"]:
        raise ValidationError(f"{path}: no data rows")
    return cal.OpsSeries(months=tuple(cols["month"]), sales=np.array(cols["sales"]),
                         prices=np.array(cols["price"]), x0=np.array(cols["x0"]),
                         xbar=np.array(cols["xbar"]))


def _strip_comments(fh):
    return (line for line in fh if not line.lstrip().startswith("#"))


def _print_table(title: str, rows: list[tuple[str, object]]) -> None:
    print(title)
    width = max(len(k) for k, _ in rows)
    for key, value in rows:
        if isinstance(value, float):
            value = f"{value:,.4f}"
        print(f"  {key:<{width}}  {value}")


def _params_payload(bench: Workbench) -> dict:
    return {"asset": dataclasses.asdict(bench.params),
            "demand": dataclasses.asdict(bench.demand)}


# -- subcommand handlers -------------------------------------------------------


def cmd_calibrate_asset(args) -> int:
    series = read_price_csv(args.prices)
    params, report = cal.fit_eou(series)
    payload = {"params": dataclasses.asdict(params),
               "estimates": report.estimates, "std_errors": report.std_errors,
               "diagnostics": report.diagnostics}
    out = Path(args.out or ".") / "asset_params.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _print_table("calibrated asset parameters",
                 [(k, report.estimates[k]) for k in ("kappa", "alpha", "sigma")]
                 + [("n_obs", report.diagnostics["n_obs"]), ("written", str(out))])
    return 0


def cmd_calibrate_demand(args) -> int:
    ops = read_ops_csv(args.ops)
    asset_doc = json.loads(Path(args.asset).read_text())
    params = processes.EouParams(**asset_doc["params"])
    demand, report = cal.calibrate_demand(ops, params, budget=args.budget,
                                          n_mc=args.n_mc, seed=args.seed)
    payload = {"demand": dataclasses.asdict(demand), "estimates": report.estimates,
               "objective": report.objective, "converged": report.converged,
               "diagnostics": report.diagnostics}
    out = Path(args.out or ".") / "demand_params.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _print_table("calibrated demand parameters",
                 list(report.estimates.items()) + [("objective", report.objective),
                                                   ("written", str(out))])
    return 0


def cmd_solve_nv(args) -> int:
    bench = Workbench(load_config(args.config))
    engine = bench.engine()
    nv = newsvendor.solve_newsvendor(engine.real_dist, bench.demand)
    risk = math.sqrt(newsvendor.payoff_variance(engine.real_dist, nv.decision,
                                                bench.demand))
    report = newsvendor.check_assumptions(engine.real_dist, bench.demand)
    payload = {"solution": dataclasses.asdict(nv), "risk": risk,
               "assumptions": dataclasses.asdict(report), **_params_payload(bench)}
    bench.write_json("newsvendor.json", payload)
    _print_table("profit-maximizing newsvendor",
                 [("P", nv.p_nv), ("R", nv.r_nv), ("Q", nv.q_nv),
                  ("expected profit", nv.profit), ("risk", risk),
                  ("assumptions ok", report.all_ok)])
    return 0


def _parse_m_grid(spec: str, bench: Workbench) -> np.ndarray:
    try:
        lo, hi, count = spec.split(":")
        lo, hi, count = float(lo), float(hi), int(count)
    except ValueError:
        raise ValidationError(f"--m-grid must be a:b:n, got {spec!r}") from None
    values = np.linspace(lo, hi, count)
    if hi <= 1.0:
        values = values * bench.nv_max_profit()
    return values


def cmd_frontier(args) -> int:
    bench = Workbench(load_config(args.config))
    m_values = _parse_m_grid(args.m_grid, bench)
    if args.mode == "hedge":
        points = optimizer.efficient_frontier(m_values, bench.params, bench.demand,
                                              bench.mc)
    else:
        points = newsvendor.frontier_no_hedge(bench.engine().real_dist, bench.demand,
                                              m_values)
    rows = []
    for pt in points:
        if pt.breakdown is not None:
            inv, unh = pt.breakdown.investment_sq, pt.breakdown.unhedgeable_sq
            share = pt.production_share
        else:
            inv = unh = share = ""
        rows.append([repr(float(pt.m)), repr(float(pt.risk)),
                     repr(float(inv)) if inv != "" else "",
                     repr(float(unh)) if unh != "" else "",
                     repr(float(pt.p)), repr(float(pt.r)), repr(float(pt.q)),
                     repr(float(share)) if share != "" else ""])
    path = bench.write_csv(f"frontier_{args.mode}.csv",
                           ["m", "risk", "invest_risk_sq", "unhedge_risk_sq",
                            "P", "R", "Q", "production_share"], rows)
    print(f"wrote {len(rows)} frontier points to {path}")
    return 0


def cmd_optimize(args) -> int:
    bench = Workbench(load_config(args.config))
    m = bench.resolve_m(args.m)
    engine = bench.engine()
    nv = newsvendor.solve_newsvendor(engine.real_dist, bench.demand)
    nv_risk = math.sqrt(newsvendor.payoff_variance(engine.real_dist, nv.decision,
                                                   bench.demand))
    d, breakdown = optimizer.minimize_B(m, bench.params, bench.demand, bench.mc)
    bounds = optimizer.build_bounds_report(m, bench.params, bench.demand, bench.mc)
    q_h = d.q(bench.demand)
    payload = {
        "m": m,
        "no_hedge": {"P": nv.p_nv, "R": nv.r_nv, "Q": nv.q_nv, "risk": nv_risk},
        "hedge": {"P": d.p, "R": d.r, "Q": q_h, "risk": breakdown.risk,
                  "investment_sq": breakdown.investment_sq,
                  "unhedgeable_sq": breakdown.unhedgeable_sq,
                  "production_share": bounds.v0_h / m},
        "markdown_pct": {"P": 100.0 * (1.0 - d.p / nv.p_nv),
                         "R": 100.0 * (1.0 - d.r / nv.r_nv),
                         "Q": 100.0 * (1.0 - q_h / nv.q_nv),
                         "risk": 100.0 * (1.0 - breakdown.risk / nv_risk)},
        "bounds": dataclasses.asdict(bounds),
        **_params_payload(bench),
    }
    bench.write_json("optimize.json", payload)
    _print_table("risk-minimizing decision with hedging",
                 [("m", m), ("P", d.p), ("R", d.r), ("Q", q_h),
                  ("risk", breakdown.risk),
                  ("price markdown %", payload["markdown_pct"]["P"]),
                  ("VPQ markdown %", payload["markdown_pct"]["R"]),
                  ("risk reduction %", payload["markdown_pct"]["risk"]),
                  ("production share %", 100.0 * bounds.v0_h / m)])
    return 0


def cmd_hedge_sim(args) -> int:
    bench = Workbench(load_config(args.config))
    m = bench.resolve_m(args.m)
    d = newsvendor.Decision(p=args.p, r=args.r)
    ensemble = strategy.simulate_strategy(d, m, bench.params, bench.demand, bench.mc,
                                          args.paths)
    decomp = strategy.decompose_risk(ensemble)
    wealth = ensemble.terminal_wealth
    payload = {
        "decision": {"P": d.p, "R": d.r}, "m": m, "paths": args.paths,
        "mean_wealth": float(wealth.mean()),
        "wealth_se": float(wealth.std(ddof=1) / math.sqrt(len(ensemble))),
        "variance": float(wealth.var(ddof=1)),
        "investment_risk": decomp.investment_risk,
        "unhedgeable_risk": decomp.unhedgeable_risk,
        "mean_hedged_payoff": float(ensemble.hedged_payoff.mean()),
    }
    bench.write_json("hedge_sim.json", payload)
    rows = [[i, repr(float(w)), repr(float(h)), repr(float(cv)), repr(float(cr))]
            for i, (w, h, cv, cr) in enumerate(zip(
                wealth, ensemble.payoff, ensemble.chi_iv, ensemble.chi_rm))]
    bench.write_csv("hedge_sim_paths.csv",
                    ["path", "terminal_wealth", "production_payoff",
                     "chi_investment", "chi_risk_mitigation"], rows)
    _print_table("strategy simulation",
                 [("mean wealth", payload["mean_wealth"]),
                  ("target m", m), ("sd", math.sqrt(payload["variance"])),
                  ("investment risk", decomp.investment_risk),
                  ("unhedgeable risk", decomp.unhedgeable_risk)])
    return 0


def cmd_dominance_test(args) -> int:
    bench = Workbench(load_config(args.config))
    report = cal.dominance_report(bench.params, bench.demand, bench.grid,
                                  n=args.n, seed=bench.seed)
    payload = dataclasses.asdict(report)
    bench.write_json("dominance.json", payload)
    _print_table("price-trend impact on demand",
                 [("classification", report.classification),
                  ("p (greater)", report.p_greater), ("p (less)", report.p_less)])
    return 0


def cmd_simulate(args) -> int:
    bench = Workbench(load_config(args.config))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "prices":
        series = cal.simulate_price_series(bench.params, args.n, seed=bench.seed)
        with out.open("w", newline="") as fh:
            fh.write(f"# config={bench.config_hash()} seed={bench.seed}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["date", "price"])
            for date, price in zip(series.dates, series.prices):
                writer.writerow([date.isoformat(), repr(float(price))])
        print(f"wrote {len(series)} prices to {out}")
    else:
        ops = cal.synthetic_ops_series(bench.params, bench.demand, args.months,
                                       seed=bench.seed, n_mc=args.n_mc)
        with out.open("w", newline="") as fh:
            fh.write(f"# config={bench.config_hash()} seed={bench.seed}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["month", "sales", "price", "x0", "xbar"])
            for i in range(len(ops)):
                writer.writerow([ops.months[i], repr(float(ops.sales[i])),
                                 repr(float(ops.prices[i])), repr(float(ops.x0[i])),
                                 repr(float(ops.xbar[i]))])
        print(f"wrote {len(ops)} months to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvhedge",
        description="Joint pricing, production and hedging workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate-asset", help="fit asset parameters from daily prices")
    p.add_argument("--prices", required=True, help="CSV with date,price columns")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_calibrate_asset)

    p = sub.add_parser("calibrate-demand", help="fit demand parameters from monthly ops")
    p.add_argument("--ops", required=True, help="CSV with month,sales,price,x0,xbar")
    p.add_argument("--asset", required=True, help="asset JSON from calibrate-asset")
    p.add_argument("--budget", type=int, default=20, help="restart budget")
    p.add_argument("--n-mc", type=int, default=10_000, dest="n_mc")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_calibrate_demand)

    p = sub.add_parser("solve-nv", help="profit-maximizing newsvendor solution")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_solve_nv)

    p = sub.add_parser("frontier", help="return-risk frontier as CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("hedge", "nohedge"), required=True)
    p.add_argument("--m-grid", required=True, dest="m_grid",
                   help="a:b:n; values <= 1 are fractions of the maximum profit")
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("optimize", help="risk-minimizing decision with hedging")
    p.add_argument("--config", required=True)
    p.add_argument("--m", help="target return (number, fraction, or 'nvmax')")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("hedge-sim", help="simulate the optimal hedging strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--m", help="target return (number, fraction, or 'nvmax')")
    p.add_argument("--paths", type=int, default=2000)
    p.set_defaults(func=cmd_hedge_sim)

    p = sub.add_parser("dominance-test", help="price-trend impact classification")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int, default=100_000)
    p.set_defaults(func=cmd_dominance_test)

    p = sub.add_parser("simulate", help="emit synthetic input CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--kind", choices=("prices", "ops"), required=True)
    p.add_argument("--n", type=int, default=2600, help="number of daily prices")
    p.add_argument("--months", type=int, default=36)
    p.add_argument("--n-mc", type=int, default=4000, dest="n_mc")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NvHedgeError as exc:
        print(f"ERROR exit={exc.exit_code} type={type(exc).__name__} msg={exc}",
              file=sys.stderr)
        return exc.exit_code


def entry() -> None:  # console-script entry point
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
