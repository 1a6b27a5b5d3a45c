"""Batch command-line interface.

Subcommands cover the full pipeline: ``simulate`` emits an ingestible panel
plus a truth sidecar; ``estimate`` fits the model; ``filter`` / ``smooth`` /
``forecast`` expose the state-space inferences; ``price``,
``default-prob`` and ``calibrate-threshold`` run the valuation layer, with
``--check mc`` embedding a Monte Carlo cross-check in the report.

Exit codes: 0 success, 1 input/config validation, 2 numerical failure,
3 calibration has no solution. All runs are deterministic for a fixed
config and seed.
"""

import argparse
import sys

import numpy as np

from . import io as pio
from .em import default_initial_params, e_step, em_fit, smoothed_market_values
from .errors import (
    DataValidationError,
    DegenerateDesignError,
    IllConditionedInnovationError,
    InfeasibleLinearizationError,
    NoSolutionError,
    PrivCreditError,
)
from .kalman import forecast, run_filter, smooth
from .model import (
    ModelParams,
    attach_asset_constants,
    build_linearization_schedule,
    real_intercepts,
)
from .pricing import build_pricing_context, equity_debt_values
from .simulate import (
    SimConfig,
    mc_default_probability,
    mc_option_price,
    mean_log_book_path,
    simulate_panel,
)

_PARAM_KEYS = (
    "k_equity", "k_liability",
    "mu0_equity", "mu0_liability",
    "phi_equity", "phi_liability",
    "sigma_u_equity", "sigma_u_liability", "rho_u",
    "sigma_v_equity", "sigma_v_liability", "rho_v",
    "sigma0_equity", "sigma0_liability", "rho0",
)
_SIM_KEYS = _PARAM_KEYS + (
    "rate", "periods", "seed",
    "book0_equity", "book0_liability",
    "payout_ratio_equity", "payout_ratio_liability",
)
_ESTIMATE_KEYS = _PARAM_KEYS + ("rate", "max_iter", "tol")
_PRICING_KEYS = _ESTIMATE_KEYS + (
    "maturity", "strike", "threshold",
    "payout_future_equity", "payout_future_liability",
    "m_t_equity", "m_t_liability",
    "paths", "seed",
)

_EXIT_VALIDATION = 1
_EXIT_NUMERICAL = 2
_EXIT_NO_SOLUTION = 3


def _cov(s1, s2, rho):
    off = rho * s1 * s2
    return np.array([[s1 * s1, off], [off, s2 * s2]])


def _params_from_config(cfg, rate):
    """Full parameter vector from config keys, or None when absent."""
    present = [k for k in _PARAM_KEYS if k in cfg]
    if not present:
        return None
    missing = [k for k in _PARAM_KEYS if k not in cfg and not k.startswith("rho")]
    if missing:
        raise DataValidationError(
            f"config supplies some parameters but misses {missing}"
        )
    f = lambda key, default=None: pio.coerce(
        cfg, key, float, default=default, required=default is None
    )
    return ModelParams(
        req_return=np.array([f("k_equity"), f("k_liability")]),
        init_mean=np.array([f("mu0_equity"), f("mu0_liability")]),
        init_cov=_cov(f("sigma0_equity"), f("sigma0_liability"), f("rho0", 0.0)),
        drift=np.array([f("phi_equity"), f("phi_liability")]),
        meas_cov=_cov(f("sigma_u_equity"), f("sigma_u_liability"), f("rho_u", 0.0)),
        state_cov=_cov(f("sigma_v_equity"), f("sigma_v_liability"), f("rho_v", 0.0)),
        rate_log=rate,
    )


def _params_dict(params):
    return {
        "req_return": params.req_return,
        "init_mean": params.init_mean,
        "init_cov": params.init_cov,
        "drift": params.drift,
        "meas_cov": params.meas_cov,
        "state_cov": params.state_cov,
        "rate_log": params.rate_log,
    }


def _feasibility(params, payout_ratio, horizon):
    """Outcome of the per-period feasibility check exp(payout gap) < 1."""
    periods = np.arange(1, horizon + 1)
    gap = payout_ratio - params.req_return - (
        params.init_mean + (periods - 1)[:, None] * params.drift
    )
    margin = np.exp(gap).max(axis=1)
    return {
        "feasible": bool((margin < 1.0).all()),
        "max_exp_gap_per_period": margin,
        "max_exp_gap": float(margin.max()),
    }


def _rate(args, cfg):
    if args.rate is not None:
        return float(np.log1p(args.rate))
    return float(np.log1p(pio.coerce(cfg, "rate", float, default=0.0)))


def _fit_or_load(args, cfg, series):
    """Use configured parameters when supplied, otherwise estimate in-run."""
    rate_log = _rate(args, cfg)
    params = _params_from_config(cfg, rate_log)
    estimation = None
    if params is None:
        max_iter = args.max_iter if args.max_iter is not None else pio.coerce(
            cfg, "max_iter", int, default=200
        )
        tol = args.tol if args.tol is not None else pio.coerce(
            cfg, "tol", float, default=1e-8
        )
        params, trace = em_fit(series, rate_log=rate_log, max_iter=max_iter, tol=tol)
        estimation = {
            "iterations": trace.n_iterations,
            "termination": trace.termination,
            "loglik_trace": trace.loglik,
        }
    return params, estimation


def cmd_simulate(args):
    cfg = pio.parse_config(args.config, _SIM_KEYS) if args.config else {}
    rate_log = _rate(args, cfg)
    params = _params_from_config(cfg, rate_log)
    if params is None:
        raise DataValidationError("simulate requires model parameters in --config")
    periods = pio.coerce(cfg, "periods", int, required=True)
    seed = args.seed if args.seed is not None else pio.coerce(
        cfg, "seed", int, default=0
    )
    book0 = np.array(
        [
            pio.coerce(cfg, "book0_equity", float, required=True),
            pio.coerce(cfg, "book0_liability", float, required=True),
        ]
    )
    payout = np.array(
        [
            pio.coerce(cfg, "payout_ratio_equity", float, required=True),
            pio.coerce(cfg, "payout_ratio_liability", float, required=True),
        ]
    )
    if not (payout > 0).all():
        raise DataValidationError("payout ratios must be strictly positive")
    ratio = np.tile(np.log(payout), (periods, 1))
    if not args.output:
        raise DataValidationError("simulate requires --output for the CSV panel")
    schedule = build_linearization_schedule(params, ratio, periods)
    log_book0 = np.log(book0)
    mean_books = mean_log_book_path(params, schedule, log_book0)
    schedule = attach_asset_constants(schedule, params, mean_books)
    config = SimConfig(n_paths=1, horizon=periods, seed=seed, measure="real")
    panel = simulate_panel(params, schedule, config, log_book0)
    books = np.exp(panel.log_books[0])
    payouts = np.exp(ratio) * books[:-1]
    pio.write_panel_csv(args.output, books, payouts)
    truth = {
        "command": "simulate",
        "seed": seed,
        "params": _params_dict(params),
        "true_multipliers": panel.multipliers[0],
        "feasibility": _feasibility(params, ratio, periods),
        "output": args.output,
    }
    pio.write_report(truth, path=args.output + ".truth.json")
    return 0


def _series_report_core(args, cfg, series, params, estimation):
    schedule = build_linearization_schedule(
        params, series.payout_ratio, series.n_periods
    )
    stats = e_step(params, series, schedule)
    filt = run_filter(
        params, schedule, series.growth, real_intercepts(params, schedule)
    )
    report = {
        "input": args.input,
        "params": _params_dict(params),
        "feasibility": _feasibility(params, series.payout_ratio, series.n_periods),
        "loglik": filt.loglik,
        "filtered_multipliers": filt.z_filt[:, :2],
        "smoothed_multipliers": stats.m_smooth,
        "smoothed_market_values": smoothed_market_values(stats, series),
    }
    if estimation is not None:
        report["estimation"] = estimation
    return report, schedule, filt, stats


def cmd_estimate(args):
    cfg = pio.parse_config(args.config, _ESTIMATE_KEYS) if args.config else {}
    series = pio.ingest(args.input)
    rate_log = _rate(args, cfg)
    init = _params_from_config(cfg, rate_log) or default_initial_params(
        series, rate_log
    )
    max_iter = args.max_iter if args.max_iter is not None else pio.coerce(
        cfg, "max_iter", int, default=200
    )
    tol = args.tol if args.tol is not None else pio.coerce(
        cfg, "tol", float, default=1e-8
    )
    params, trace = em_fit(
        series, params_init=init, rate_log=rate_log, max_iter=max_iter, tol=tol
    )
    estimation = {
        "iterations": trace.n_iterations,
        "termination": trace.termination,
        "loglik_trace": trace.loglik,
        "lambda_before": trace.lambda_before,
        "lambda_after": trace.lambda_after,
        "max_change": trace.max_change,
    }
    report, _, _, _ = _series_report_core(args, cfg, series, params, estimation)
    report["command"] = "estimate"
    pio.write_report(report, path=args.output, stream=sys.stdout)
    if trace.termination.startswith("aborted"):
        print(f"numerical error: {trace.termination}", file=sys.stderr)
        return _EXIT_NUMERICAL
    return 0


def cmd_filter(args):
    cfg = pio.parse_config(args.config, _ESTIMATE_KEYS) if args.config else {}
    series = pio.ingest(args.input)
    params, estimation = _fit_or_load(args, cfg, series)
    report, _, filt, _ = _series_report_core(args, cfg, series, params, estimation)
    report["command"] = "filter"
    report["filtered_multiplier_cov"] = filt.cov_z_filt[:, :2, :2]
    report["predicted_growth"] = filt.b_pred[1:]
    pio.write_report(report, path=args.output, stream=sys.stdout)
    return 0


def cmd_smooth(args):
    cfg = pio.parse_config(args.config, _ESTIMATE_KEYS) if args.config else {}
    series = pio.ingest(args.input)
    params, estimation = _fit_or_load(args, cfg, series)
    report, schedule, filt, stats = _series_report_core(
        args, cfg, series, params, estimation
    )
    smo = smooth(filt, params)
    report["command"] = "smooth"
    report["smoothed_multiplier_cov"] = smo.cov_m_smooth
    pio.write_report(report, path=args.output, stream=sys.stdout)
    return 0


def cmd_forecast(args):
    cfg = pio.parse_config(args.config, _PRICING_KEYS) if args.config else {}
    series = pio.ingest(args.input)
    params, estimation = _fit_or_load(args, cfg, series)
    maturity = args.maturity or pio.coerce(cfg, "maturity", int, default=None)
    if not maturity:
        raise DataValidationError("forecast requires --maturity periods ahead")
    future = _future_payout(cfg, maturity)
    horizon = series.n_periods + maturity
    ratio = np.vstack([series.payout_ratio, future])
    schedule = build_linearization_schedule(params, ratio, horizon)
    filt = run_filter(
        params, schedule, series.growth, real_intercepts(params, schedule)
    )
    fc = forecast(filt, params, schedule, horizon)
    report = {
        "command": "forecast",
        "input": args.input,
        "params": _params_dict(params),
        "feasibility": _feasibility(params, ratio, horizon),
        "forecast_growth": fc.b_mean[fc.start :],
        "forecast_growth_cov": fc.cov_b[fc.start :],
        "forecast_multipliers": fc.z_mean[fc.start :, :2],
        "forecast_log_books": series.log_books()[-1]
        + fc.b_mean[fc.start :].cumsum(axis=0),
    }
    if estimation is not None:
        report["estimation"] = estimation
    pio.write_report(report, path=args.output, stream=sys.stdout)
    return 0


def _future_payout(cfg, maturity):
    eq = pio.coerce(cfg, "payout_future_equity", float, default=None)
    li = pio.coerce(cfg, "payout_future_liability", float, default=None)
    if eq is None or li is None:
        raise DataValidationError(
            "pricing horizons past the sample need payout_future_equity and "
            "payout_future_liability in the config (payout-to-book ratios)"
        )
    if eq <= 0 or li <= 0:
        raise DataValidationError("future payout ratios must be strictly positive")
    return np.tile(np.log([eq, li]), (maturity, 1))


def _pricing_setup(args, cfg):
    series = pio.ingest(args.input)
    params, estimation = _fit_or_load(args, cfg, series)
    maturity = args.maturity or pio.coerce(cfg, "maturity", int, default=None)
    if not maturity:
        raise DataValidationError("a positive --maturity is required")
    future = _future_payout(cfg, maturity)
    ctx = build_pricing_context(params, series, maturity, future)
    return series, params, estimation, ctx


def _public_multiplier(cfg):
    eq = pio.coerce(cfg, "m_t_equity", float, default=None)
    li = pio.coerce(cfg, "m_t_liability", float, default=None)
    if eq is None or li is None:
        return None
    return np.array([eq, li])


def _mc_check_price(args, cfg, ctx, strike):
    paths = args.paths or pio.coerce(cfg, "paths", int, default=200_000)
    seed = args.seed if args.seed is not None else pio.coerce(
        cfg, "seed", int, default=0
    )
    mean, cov = ctx.filter_rn.multiplier_mean(ctx.origin), ctx.filter_rn.multiplier_cov(ctx.origin)
    panel = simulate_panel(
        ctx.params, ctx.schedule,
        SimConfig(paths, ctx.tau, seed, measure="risk_neutral"),
        ctx.log_books[ctx.origin], start=ctx.origin,
        init_mean=mean, init_cov=cov,
    )
    (call_mc, call_se), (put_mc, put_se) = mc_option_price(
        panel, strike, ctx.params.rate_log
    )
    call, put = ctx.price_private(strike)

    def z(diff, se):
        if se > 0:
            return diff / se
        return 0.0 if abs(diff) < 1e-12 else float("inf")

    return {
        "paths": paths,
        "seed": seed,
        "call_mc": call_mc, "call_se": call_se,
        "call_z": z(call - call_mc, call_se),
        "put_mc": put_mc, "put_se": put_se,
        "put_z": z(put - put_mc, put_se),
    }


def _mc_check_default(args, cfg, ctx, threshold):
    paths = args.paths or pio.coerce(cfg, "paths", int, default=200_000)
    seed = args.seed if args.seed is not None else pio.coerce(
        cfg, "seed", int, default=0
    )
    mean, cov = ctx.filter_real.multiplier_mean(ctx.origin), ctx.filter_real.multiplier_cov(ctx.origin)
    panel = simulate_panel(
        ctx.params, ctx.schedule,
        SimConfig(paths, ctx.tau, seed, measure="real"),
        ctx.log_books[ctx.origin], start=ctx.origin,
        init_mean=mean, init_cov=cov,
    )
    pd_mc, pd_se = mc_default_probability(panel, threshold)
    pd = ctx.default_prob_private(threshold)
    return {
        "paths": paths,
        "seed": seed,
        "pd_mc": pd_mc, "pd_se": pd_se,
        "pd_z": (pd - pd_mc) / pd_se if pd_se > 0 else 0.0,
    }


def cmd_price(args):
    cfg = pio.parse_config(args.config, _PRICING_KEYS) if args.config else {}
    series, params, estimation, ctx = _pricing_setup(args, cfg)
    strike = args.strike or pio.coerce(cfg, "strike", float, default=None)
    if strike is None:
        raise DataValidationError("price requires --strike (debt nominal)")
    call, put = ctx.price_private(strike)
    equity, debt = equity_debt_values(
        call, put, strike, ctx.tau, params.rate_log
    )
    report = {
        "command": "price",
        "input": args.input,
        "params": _params_dict(params),
        "origin": ctx.origin,
        "maturity": ctx.maturity,
        "strike": strike,
        "feasibility": _feasibility(
            params, ctx.schedule.payout_ratio[1:], ctx.maturity
        ),
        "private": {
            "call": call, "put": put,
            "equity_value": equity, "debt_value": debt,
        },
    }
    m_t = _public_multiplier(cfg)
    if m_t is not None:
        call_pub, put_pub = ctx.price_public(m_t, strike)
        eq_pub, debt_pub = equity_debt_values(
            call_pub, put_pub, strike, ctx.tau, params.rate_log
        )
        report["public"] = {
            "multiplier": m_t,
            "call": call_pub, "put": put_pub,
            "equity_value": eq_pub, "debt_value": debt_pub,
        }
    if estimation is not None:
        report["estimation"] = estimation
    if args.check == "mc":
        report["mc_check"] = _mc_check_price(args, cfg, ctx, strike)
    pio.write_report(report, path=args.output, stream=sys.stdout)
    return 0


def cmd_default_prob(args):
    cfg = pio.parse_config(args.config, _PRICING_KEYS) if args.config else {}
    series, params, estimation, ctx = _pricing_setup(args, cfg)
    threshold = pio.coerce(cfg, "threshold", float, default=None)
    calibrated = threshold is None
    if calibrated:
        threshold = ctx.calibrate_threshold()
    pd_private = ctx.default_prob_private(threshold)
    report = {
        "command": "default-prob",
        "input": args.input,
        "params": _params_dict(params),
        "origin": ctx.origin,
        "maturity": ctx.maturity,
        "threshold": threshold,
        "threshold_calibrated": calibrated,
        "feasibility": _feasibility(
            params, ctx.schedule.payout_ratio[1:], ctx.maturity
        ),
        "prob_default_private": pd_private,
    }
    m_t = _public_multiplier(cfg)
    if m_t is not None:
        report["prob_default_public"] = ctx.default_prob_public(m_t, threshold)
        report["public_multiplier"] = m_t
    if estimation is not None:
        report["estimation"] = estimation
    if args.check == "mc":
        report["mc_check"] = _mc_check_default(args, cfg, ctx, threshold)
    pio.write_report(report, path=args.output, stream=sys.stdout)
    return 0


def cmd_calibrate_threshold(args):
    cfg = pio.parse_config(args.config, _PRICING_KEYS) if args.config else {}
    series, params, estimation, ctx = _pricing_setup(args, cfg)
    threshold = ctx.calibrate_threshold()
    target = ctx.target_equity()
    repriced = ctx.price_private(threshold)[0]
    report = {
        "command": "calibrate-threshold",
        "input": args.input,
        "params": _params_dict(params),
        "origin": ctx.origin,
        "maturity": ctx.maturity,
        "threshold": threshold,
        "target_equity": target,
        "repriced_call": repriced,
        "reprice_rel_residual": abs(repriced - target) / target,
        "prob_default_private": ctx.default_prob_private(threshold),
        "feasibility": _feasibility(
            params, ctx.schedule.payout_ratio[1:], ctx.maturity
        ),
    }
    if estimation is not None:
        report["estimation"] = estimation
    pio.write_report(report, path=args.output, stream=sys.stdout)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="privcredit",
        description="Structural credit risk for private companies from book data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "simulate": cmd_simulate,
        "estimate": cmd_estimate,
        "filter": cmd_filter,
        "smooth": cmd_smooth,
        "forecast": cmd_forecast,
        "price": cmd_price,
        "default-prob": cmd_default_prob,
        "calibrate-threshold": cmd_calibrate_threshold,
    }
    for name, fn in commands.items():
        p = sub.add_parser(name)
        p.add_argument("--input", help="panel CSV path")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--output", help="report path (stdout when omitted)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--maturity", type=int, default=None,
                       help="periods beyond the last observation")
        p.add_argument("--strike", type=float, default=None)
        p.add_argument("--rate", type=float, default=None,
                       help="per-period risk-free rate (not logged)")
        p.add_argument("--check", choices=["mc"], default=None)
        p.add_argument("--max-iter", type=int, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.set_defaults(handler=fn)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except DataValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_VALIDATION
    except (InfeasibleLinearizationError, IllConditionedInnovationError,
            DegenerateDesignError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return _EXIT_NUMERICAL
    except NoSolutionError as exc:
        print(f"no solution: {exc}", file=sys.stderr)
        return _EXIT_NO_SOLUTION
    except PrivCreditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
