"""Risk-neutral valuation, option pricing, thresholds and default probabilities.

Conditional on period-t information, the log market value pair at maturity T
is Gaussian with an affine mean in the period-t multiplier:

    mean = alpha m̃_t + beta + ln B_t,
    alpha = Σ_{i=t+1}^T G_i − (T − t − 1) I,
    beta  = Σ_{i=t+1}^T c_i + Σ_{i=t+1}^T (i − t − 1)(G_i − I) φ,

with intercepts c̃ (risk-neutral) or c (real), and covariance

    Σ_{T|t} = (T − t) Σ_u + Σ_{i=t+1}^{T-1} C_i Σ_v C_i',
    C_i = Σ_{j=i+1}^T G_j − (T − i) I

(the maturity-date state shock cancels out of the value level). The log
asset value is the tangent combination of the pair, hence scalar Gaussian,
and option prices and default probabilities follow in Black-Scholes form.
For a private company the period-t multiplier is integrated out against its
filtered posterior, which shifts the mean to the posterior mean and adds
alpha-propagated posterior variance.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import DataValidationError, NoSolutionError
from .kalman import forecast, run_filter
from .model import (
    asset_weight_vector,
    attach_asset_constants,
    build_linearization_schedule,
    real_intercepts,
    risk_neutral_intercepts,
)

_I2 = np.eye(2)


@dataclass(frozen=True)
class RiskNeutralSystem:
    """Measure-change ingredients by absolute period (row 0 unused)."""

    intercepts: np.ndarray
    kernel: np.ndarray
    shift: np.ndarray
    q: np.ndarray


def build_risk_neutral(params, schedule):
    """Risk-neutral intercepts, Girsanov kernel and shift per period.

    The kernel stacks G_t(r̃ i − k̃) over the measurement block and half the
    state-noise variances over the state block; the shift collects the
    lognormal convexity corrections. ``q`` stacks (c̃_t, φ), the intercept
    of the stacked-observation form of the risk-neutral system.
    """
    H = schedule.horizon
    c_rn = risk_neutral_intercepts(params, schedule)
    kernel = np.full((H + 1, 4), np.nan)
    shift = np.full((H + 1, 4), np.nan)
    q = np.full((H + 1, 4), np.nan)
    du = np.diag(params.meas_cov)
    dv = np.diag(params.state_cov)
    for t in range(1, H + 1):
        g = schedule.gain[t]
        kernel[t] = np.concatenate([g * (params.rate_log - params.req_return),
                                    0.5 * dv])
        shift[t] = np.concatenate([0.5 * du / g, 0.5 * dv])
        q[t] = np.concatenate([c_rn[t], params.drift])
    return RiskNeutralSystem(intercepts=c_rn, kernel=kernel, shift=shift, q=q)


@dataclass(frozen=True)
class HorizonMoments:
    """Conditional moments of the log value pair at maturity given period t.

    ``alpha`` multiplies the period-t multiplier; ``beta_rn``/``beta_real``
    are the deterministic drifts under the two measures; ``cov`` is the
    measure-free conditional covariance.
    """

    alpha: np.ndarray
    beta_rn: np.ndarray
    beta_real: np.ndarray
    cov: np.ndarray
    origin: int
    maturity: int

    def beta(self, measure):
        return self.beta_rn if measure == "risk_neutral" else self.beta_real


def horizon_moments(params, schedule, origin, maturity):
    """Closed-form conditional moments of the maturity log value pair."""
    t, T = int(origin), int(maturity)
    if t >= T:
        raise DataValidationError("maturity must exceed the origin period")
    if schedule.horizon < T:
        raise DataValidationError("schedule does not cover the maturity")
    g = schedule.gain[t + 1 : T + 1]
    alpha = np.diag(g.sum(axis=0) - (T - t - 1))
    c_rn = risk_neutral_intercepts(params, schedule)[t + 1 : T + 1]
    c_real = real_intercepts(params, schedule)[t + 1 : T + 1]
    lead = (np.arange(t + 1, T + 1) - t - 1)[:, None]
    drift_terms = (lead * (g - 1.0) * params.drift).sum(axis=0)
    beta_rn = c_rn.sum(axis=0) + drift_terms
    beta_real = c_real.sum(axis=0) + drift_terms
    cov = (T - t) * params.meas_cov.copy()
    for i in range(t + 1, T):
        coef = np.diag(schedule.gain[i + 1 : T + 1].sum(axis=0) - (T - i))
        cov += coef @ params.state_cov @ coef.T
    return HorizonMoments(
        alpha=alpha, beta_rn=beta_rn, beta_real=beta_real,
        cov=0.5 * (cov + cov.T), origin=t, maturity=T,
    )


def horizon_cov_reference(params, schedule, origin, maturity):
    """Independent covariance assembly via stacked-system propagation matrices.

    Builds the noise-to-maturity-value coefficient of every period shock from
    the 4x4 one-step propagation form and sums the quadratic forms; used as a
    cross-check of the direct formula in :func:`horizon_moments`.
    """
    t, T = int(origin), int(maturity)
    q_inv = np.block([[_I2, -_I2], [np.zeros((2, 2)), _I2]])
    j_b = np.hstack([_I2, np.zeros((2, 2))])
    j_m = np.hstack([np.zeros((2, 2)), _I2])
    sig = np.zeros((4, 4))
    sig[:2, :2] = params.meas_cov
    sig[2:, 2:] = params.state_cov

    def q_hat(j):
        out = np.zeros((4, 4))
        out[:2, 2:] = schedule.gain_matrix(j) - _I2
        out[2:, 2:] = _I2
        return out

    total = np.zeros((2, 2))
    for i in range(t + 1, T + 1):
        m_i = q_inv + sum((q_hat(j) for j in range(i + 1, T + 1)),
                          np.zeros((4, 4)))
        n_i = q_hat(T) if i < T else q_inv
        w_i = j_b @ m_i + j_m @ n_i
        total += w_i @ sig @ w_i.T
    return 0.5 * (total + total.T)


def asset_log_moments_public(moments, m_t, log_books_t, schedule, measure):
    """Mean and variance of the maturity log asset value given a known
    period-t multiplier."""
    T = moments.maturity
    if not schedule.has_asset_constants():
        raise DataValidationError("schedule lacks asset constants")
    weights = asset_weight_vector(schedule.asset_weight[T])
    mean_pair = (
        moments.alpha @ np.asarray(m_t, float)
        + moments.beta(measure)
        + np.asarray(log_books_t, float)
    )
    mu = float(weights @ mean_pair
               + schedule.asset_weight[T] * schedule.asset_shift[T])
    var = float(weights @ moments.cov @ weights)
    return mu, var


def asset_log_moments_private(moments, m_mean, m_cov, log_books_t, schedule,
                              measure):
    """Asset log moments with the period-t multiplier integrated out.

    ``m_mean``/``m_cov`` are the filtered posterior moments of the period-t
    multiplier under the matching measure's intercepts. The mean is the
    public affine map at the posterior mean; the variance gains the
    alpha-propagated posterior term.
    """
    mu, var = asset_log_moments_public(
        moments, m_mean, log_books_t, schedule, measure
    )
    weights = asset_weight_vector(schedule.asset_weight[moments.maturity])
    extra = weights @ moments.alpha @ np.asarray(m_cov, float) @ moments.alpha.T @ weights
    return mu, var + float(extra)


def price_options(mu_a, var_a, strike, tau, rate_log):
    """Black-Scholes-form call and put prices on a lognormal asset value.

    ``mu_a``/``var_a`` are the conditional moments of the log asset value at
    maturity; ``tau`` the number of periods to maturity. The zero-variance
    case prices the deterministic payoff directly.
    """
    if strike <= 0:
        raise DataValidationError("strike must be positive")
    if var_a < 0:
        raise DataValidationError("variance must be nonnegative")
    disc = math.exp(-tau * rate_log)
    if var_a == 0.0:
        fwd = math.exp(mu_a)
        return disc * max(fwd - strike, 0.0), disc * max(strike - fwd, 0.0)
    sd = math.sqrt(var_a)
    d1 = (mu_a + var_a - math.log(strike)) / sd
    d2 = d1 - sd
    growth_leg = math.exp(mu_a - tau * rate_log + 0.5 * var_a)
    call = growth_leg * norm.cdf(d1) - disc * strike * norm.cdf(d2)
    put = disc * strike * norm.cdf(-d2) - growth_leg * norm.cdf(-d1)
    return call, put


def equity_debt_values(call, put, strike, tau, rate_log):
    """Equity is the call; debt is the discounted nominal less the put."""
    return call, strike * math.exp(-tau * rate_log) - put


def default_probability(mu_a_real, var_a, threshold):
    """Probability the maturity asset value falls below the threshold.

    Real-measure asset log moments in, Φ of the standardized log distance
    out; a zero variance degenerates to the indicator.
    """
    if threshold <= 0:
        raise DataValidationError("threshold must be positive")
    log_thr = math.log(threshold)
    if var_a == 0.0:
        return 1.0 if log_thr >= mu_a_real else 0.0
    return float(norm.cdf((log_thr - mu_a_real) / math.sqrt(var_a)))


def solve_threshold(target_equity, mu_a, var_a, tau, rate_log,
                    rel_tol=1e-10, max_iter=200):
    """Invert the call price in the strike: find L with C(L) = target.

    The call is strictly decreasing in the strike from its strike-free value
    exp(mu + var/2 − τ r̃), so the root is unique when the target lies below
    that bound. Bisection with bracket doubling (derivative-free, robust at
    vanishing variance).
    """
    if target_equity <= 0:
        raise DataValidationError("target equity value must be positive")
    strike_free = math.exp(mu_a + 0.5 * var_a - tau * rate_log)
    if target_equity >= strike_free:
        raise NoSolutionError(
            f"target equity {target_equity:.6g} is not attainable: the "
            f"strike-free call value is {strike_free:.6g}"
        )

    def call_at(L):
        return price_options(mu_a, var_a, L, tau, rate_log)[0]

    hi = strike_free * 1e3
    for _ in range(200):
        if call_at(hi) < target_equity:
            break
        hi *= 2.0
    lo = 0.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if call_at(mid) > target_equity:
            lo = mid
        else:
            hi = mid
        if (hi - lo) <= rel_tol * hi:
            break
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class PricingReport:
    """One pricing/default computation, CLI- and test-facing."""

    call: float
    put: float
    equity_value: float
    debt_value: float
    threshold: float
    prob_default: float
    info_set: str
    origin: int
    maturity: int


@dataclass(frozen=True)
class PricingContext:
    """Everything needed to price from the end of an observed sample.

    The origin is the last observed period; the schedule covers the sample
    plus the pricing horizon with asset constants from observed books within
    the sample and real-measure forecast books beyond.
    """

    params: object
    schedule: object
    origin: int
    maturity: int
    log_books: np.ndarray
    filter_real: object
    filter_rn: object
    moments: HorizonMoments

    @property
    def tau(self):
        return self.maturity - self.origin

    def _posterior(self, measure):
        filt = self.filter_rn if measure == "risk_neutral" else self.filter_real
        return filt.multiplier_mean(self.origin), filt.multiplier_cov(self.origin)

    def asset_moments_private(self, measure):
        mean, cov = self._posterior(measure)
        return asset_log_moments_private(
            self.moments, mean, cov, self.log_books[self.origin],
            self.schedule, measure,
        )

    def asset_moments_public(self, m_t, measure):
        return asset_log_moments_public(
            self.moments, m_t, self.log_books[self.origin], self.schedule,
            measure,
        )

    def price_private(self, strike):
        mu, var = self.asset_moments_private("risk_neutral")
        return price_options(mu, var, strike, self.tau, self.params.rate_log)

    def price_public(self, m_t, strike):
        mu, var = self.asset_moments_public(m_t, "risk_neutral")
        return price_options(mu, var, strike, self.tau, self.params.rate_log)

    def default_prob_private(self, threshold):
        mu, var = self.asset_moments_private("real")
        return default_probability(mu, var, threshold)

    def default_prob_public(self, m_t, threshold):
        mu, var = self.asset_moments_public(m_t, "real")
        return default_probability(mu, var, threshold)

    def target_equity(self):
        """Market equity value implied by the filtered multiplier at the
        origin (filtered and smoothed coincide there)."""
        m_eq = self.filter_real.multiplier_mean(self.origin)[0]
        return math.exp(m_eq + self.log_books[self.origin, 0])

    def calibrate_threshold(self):
        mu, var = self.asset_moments_private("risk_neutral")
        return solve_threshold(
            self.target_equity(), mu, var, self.tau, self.params.rate_log
        )

    def report_private(self, strike, threshold=None):
        """Bundle prices, balance-sheet values and the default probability.

        With ``threshold=None`` the default threshold is calibrated to the
        filtered equity value at the origin.
        """
        call, put = self.price_private(strike)
        equity, debt = equity_debt_values(
            call, put, strike, self.tau, self.params.rate_log
        )
        if threshold is None:
            threshold = self.calibrate_threshold()
        return PricingReport(
            call=call, put=put, equity_value=equity, debt_value=debt,
            threshold=threshold,
            prob_default=self.default_prob_private(threshold),
            info_set="private", origin=self.origin, maturity=self.maturity,
        )


def extend_payout_ratio(series, maturity, future=None):
    """Payout-ratio rows covering the sample plus ``maturity`` extra periods.

    Future log payout-to-book ratios are part of the period-0 information
    set and cannot be derived from data; they must be supplied for pricing
    horizons past the sample.
    """
    if future is None:
        raise DataValidationError(
            "payout ratios beyond the sample must be supplied for the "
            "pricing horizon"
        )
    future = np.asarray(future, dtype=float)
    if future.shape == (2,):
        future = np.tile(future, (maturity, 1))
    if future.shape != (maturity, 2):
        raise DataValidationError(
            f"future payout ratios must have shape ({maturity}, 2)"
        )
    return np.vstack([series.payout_ratio, future])


def build_pricing_context(params, series, maturity, payout_future):
    """Assemble schedule, filters, forecast books and horizon moments.

    ``maturity`` counts periods beyond the last observation (the pricing
    origin). ``payout_future`` is a (maturity, 2) array or a single 2-vector
    reused each period.
    """
    if maturity < 1:
        raise DataValidationError("maturity must be at least one period")
    t0 = series.n_periods
    T = t0 + maturity
    ratio = extend_payout_ratio(series, maturity, payout_future)
    schedule = build_linearization_schedule(params, ratio, T)
    filt_real = run_filter(params, schedule, series.growth,
                           real_intercepts(params, schedule))
    filt_rn = run_filter(params, schedule, series.growth,
                         risk_neutral_intercepts(params, schedule))
    fc = forecast(filt_real, params, schedule, T)
    log_books_obs = series.log_books()
    future_books = log_books_obs[-1] + fc.b_mean[t0 + 1 : T + 1].cumsum(axis=0)
    log_books = np.vstack([log_books_obs, future_books])
    schedule = attach_asset_constants(schedule, params, log_books)
    moments = horizon_moments(params, schedule, t0, T)
    return PricingContext(
        params=params, schedule=schedule, origin=t0, maturity=T,
        log_books=log_books, filter_real=filt_real, filter_rn=filt_rn,
        moments=moments,
    )
