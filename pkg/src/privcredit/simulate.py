"""Ground-truth simulation machinery and Monte Carlo estimators.

The model is linear-Gaussian in logs, so paths are simulated exactly (no
discretization error) under either measure; the only difference between the
two is the measurement intercept. Panels carry both the exact log asset
value ln(Vᵉ + Vˡ) and its linearized counterpart so approximation error can
be quantified separately from formula correctness.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError
from .model import linearized_log_asset, real_intercepts, risk_neutral_intercepts

MEASURES = ("real", "risk_neutral")


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings; identical configs give bit-identical panels."""

    n_paths: int
    horizon: int
    seed: int
    measure: str = "real"
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths < 1:
            raise DataValidationError("n_paths must be >= 1")
        if self.horizon < 1:
            raise DataValidationError("horizon must be >= 1")
        if self.measure not in MEASURES:
            raise DataValidationError(f"measure must be one of {MEASURES}")
        if self.antithetic and self.n_paths % 2:
            raise DataValidationError("antithetic simulation needs an even n_paths")


@dataclass(frozen=True)
class SimulatedPanel:
    """Simulated paths; time axis 1 runs over periods start..start+horizon.

    ``log_values`` is the log market value pair (multiplier plus log book
    value by construction); ``log_asset_exact`` is ln(Vᵉ + Vˡ) and
    ``log_asset_lin`` the tangent approximation with the schedule's
    per-period asset constants.
    """

    multipliers: np.ndarray
    growth: np.ndarray
    log_books: np.ndarray
    log_values: np.ndarray
    log_asset_exact: np.ndarray
    log_asset_lin: np.ndarray
    start: int
    config: SimConfig
    asset_weight: np.ndarray
    asset_shift: np.ndarray

    @property
    def n_periods(self):
        return self.growth.shape[1]


def _normals(rng, n_paths, shape, antithetic):
    if antithetic:
        half = n_paths // 2
        draw = rng.standard_normal((half, *shape))
        return np.concatenate([draw, -draw], axis=0)
    return rng.standard_normal((n_paths, *shape))


def simulate_panel(params, schedule, config, log_books0, start=0,
                   init_mean=None, init_cov=None):
    """Simulate exact model paths.

    Parameters
    ----------
    log_books0 : (2,) array
        Log book values at the start period.
    start : int
        Absolute period of the initial condition; the panel covers periods
        start..start+config.horizon and the schedule must reach the end.
    init_mean, init_cov : optional
        Distribution of the log multiplier at the start period (defaults to
        the model prior; pass a zero matrix to pin a known multiplier).

    Requires asset constants on the schedule (see
    :func:`privcredit.model.attach_asset_constants`).
    """
    if not schedule.has_asset_constants():
        raise DataValidationError("schedule lacks asset constants")
    end = start + config.horizon
    if schedule.horizon < end:
        raise DataValidationError("schedule does not cover the simulation horizon")
    mean0 = params.init_mean if init_mean is None else np.asarray(init_mean, float)
    cov0 = params.init_cov if init_cov is None else np.asarray(init_cov, float)
    if config.measure == "real":
        intercepts = real_intercepts(params, schedule)
    else:
        intercepts = risk_neutral_intercepts(params, schedule)

    rng = np.random.Generator(np.random.Philox(key=config.seed))
    n, P = config.n_paths, config.horizon
    e0 = _normals(rng, n, (2,), config.antithetic)
    ev = _normals(rng, n, (P, 2), config.antithetic)
    eu = _normals(rng, n, (P, 2), config.antithetic)

    # PSD square roots (degenerate covariances are legitimate here)
    def sq(m):
        w, v = np.linalg.eigh(m)
        return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))

    mult = np.empty((n, P + 1, 2))
    growth = np.empty((n, P, 2))
    log_books = np.empty((n, P + 1, 2))
    mult[:, 0] = mean0 + e0 @ sq(cov0).T
    log_books[:, 0] = np.asarray(log_books0, float)
    rv = ev @ sq(params.state_cov).T
    ru = eu @ sq(params.meas_cov).T
    for j in range(1, P + 1):
        t = start + j
        m_prev = mult[:, j - 1]
        m_new = params.drift + m_prev + rv[:, j - 1]
        growth[:, j - 1] = (
            -m_new + schedule.gain[t] * m_prev + intercepts[t] + ru[:, j - 1]
        )
        mult[:, j] = m_new
        log_books[:, j] = log_books[:, j - 1] + growth[:, j - 1]

    log_values = mult + log_books
    w = schedule.asset_weight[start : end + 1]
    h = schedule.asset_shift[start : end + 1]
    exact = np.logaddexp(log_values[..., 0], log_values[..., 1])
    lin = linearized_log_asset(log_values, w, h)
    return SimulatedPanel(
        multipliers=mult, growth=growth, log_books=log_books,
        log_values=log_values, log_asset_exact=exact, log_asset_lin=lin,
        start=start, config=config, asset_weight=w.copy(), asset_shift=h.copy(),
    )


def mean_log_book_path(params, schedule, log_books0, measure="real",
                       start=0, horizon=None):
    """Deterministic mean path of log books from the start period.

    This is the plug-in book path for asset centers in contexts with no
    observed sample (the mean of the simulated panel's books).
    """
    if horizon is None:
        horizon = schedule.horizon - start
    if measure == "real":
        intercepts = real_intercepts(params, schedule)
    else:
        intercepts = risk_neutral_intercepts(params, schedule)
    out = np.empty((horizon + 1, 2))
    out[0] = np.asarray(log_books0, float)
    for j in range(1, horizon + 1):
        t = start + j
        m_new = params.init_mean + t * params.drift
        m_prev = params.init_mean + (t - 1) * params.drift
        out[j] = out[j - 1] - m_new + schedule.gain[t] * m_prev + intercepts[t]
    return out


def _mc_mean_se(values, antithetic):
    """Mean and standard error; antithetic pairs are collapsed first."""
    if antithetic:
        half = values.shape[0] // 2
        values = 0.5 * (values[:half] + values[half:])
    n = values.shape[0]
    se = values.std(ddof=1) / np.sqrt(n) if n > 1 else np.inf
    return float(values.mean()), float(se)


def mc_option_price(panel, strike, rate_log):
    """Discounted Monte Carlo call/put prices off the linearized asset value.

    Returns ((call, call_se), (put, put_se)); the panel must be simulated
    under the risk-neutral measure for prices to be meaningful.
    """
    if strike < 0:
        raise DataValidationError("strike must be nonnegative")
    tau = panel.n_periods
    disc = np.exp(-tau * rate_log)
    asset = np.exp(panel.log_asset_lin[:, -1])
    call, call_se = _mc_mean_se(disc * np.maximum(asset - strike, 0.0),
                                panel.config.antithetic)
    put, put_se = _mc_mean_se(disc * np.maximum(strike - asset, 0.0),
                              panel.config.antithetic)
    return (call, call_se), (put, put_se)


def mc_default_probability(panel, threshold):
    """Default frequency {Ṽᵃ_T <= ln threshold} with binomial standard error."""
    if threshold <= 0:
        raise DataValidationError("threshold must be positive")
    hits = panel.log_asset_lin[:, -1] <= np.log(threshold)
    n = hits.shape[0]
    p = float(hits.mean())
    se = float(np.sqrt(max(p * (1.0 - p), 0.0) / n))
    return p, se


@dataclass(frozen=True)
class LinearizationErrorReport:
    """Per-period absolute gap between exact and linearized log asset value."""

    max_abs: np.ndarray
    mean_abs: np.ndarray

    @property
    def overall_max(self):
        return float(self.max_abs.max())


def linearization_error_report(panel):
    err = np.abs(panel.log_asset_exact - panel.log_asset_lin)
    return LinearizationErrorReport(
        max_abs=err.max(axis=0), mean_abs=err.mean(axis=0)
    )


def binned_error_curve(panel, period, n_bins=12):
    """Mean absolute linearization error binned by |deviation from center|.

    Returns (bin centers, mean errors) over paths at the given panel column;
    used to check that the error grows (quadratically) in the deviation.
    """
    values = panel.log_values[:, period]
    dev = np.abs(
        (values[:, 0] - values[:, 1])
        - (np.log(1.0 / panel.asset_weight[period] - 1.0))
    )
    err = np.abs(panel.log_asset_exact[:, period] - panel.log_asset_lin[:, period])
    edges = np.quantile(dev, np.linspace(0.0, 1.0, n_bins + 1))
    centers, means = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (dev >= lo) & (dev < hi if hi < edges[-1] else dev <= hi)
        if mask.sum() >= 5:
            centers.append(dev[mask].mean())
            means.append(err[mask].mean())
    return np.array(centers), np.array(means)
