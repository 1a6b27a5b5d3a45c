"""Core data model and deterministic linearization quantities.

The engine works in logs. A private company's market values of equity and
liability are latent; what is observed are book values and payouts. The
latent object is the log multiplier (log market-to-book ratio) for the
(equity, liability) pair, which follows a unit-root process with drift.
Observed log book-value growth is linked to the multiplier through a
log-linear (dynamic Gordon growth) approximation whose per-period constants
are computed here.

Vector convention: every 2-vector is ordered (equity, liability).
Per-period arrays are indexed by absolute period, with row 0 unused (NaN)
for quantities defined only for periods 1..H.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError, InfeasibleLinearizationError

_COMPONENTS = ("equity", "liability")


def _freeze(a):
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


def _check_symmetric(name, m):
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise DataValidationError(f"{name} must be 2x2, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-12):
        raise DataValidationError(f"{name} must be symmetric")
    return 0.5 * (m + m.T)


@dataclass(frozen=True)
class ModelParams:
    """All estimable parameters plus the log risk-free rate.

    Attributes
    ----------
    req_return : (2,) array
        Per-period log required rates of return (equity, liability).
    init_mean : (2,) array
        Prior mean of the initial log multiplier.
    init_cov : (2, 2) array
        Prior covariance of the initial log multiplier (PSD).
    drift : (2,) array
        Unit-root drift of the log multiplier.
    meas_cov : (2, 2) array
        Measurement-noise covariance (PD for estimation; PSD accepted for
        degenerate diagnostic limits).
    state_cov : (2, 2) array
        State-noise covariance (same convention as ``meas_cov``).
    rate_log : float
        Per-period log risk-free rate ln(1 + r).
    """

    req_return: np.ndarray
    init_mean: np.ndarray
    init_cov: np.ndarray
    drift: np.ndarray
    meas_cov: np.ndarray
    state_cov: np.ndarray
    rate_log: float

    def __post_init__(self):
        for name in ("req_return", "init_mean", "drift"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (2,):
                raise DataValidationError(f"{name} must be a 2-vector")
            object.__setattr__(self, name, _freeze(v))
        for name in ("init_cov", "meas_cov", "state_cov"):
            m = _check_symmetric(name, getattr(self, name))
            if np.linalg.eigvalsh(m).min() < -1e-10:
                raise DataValidationError(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, _freeze(m))
        object.__setattr__(self, "rate_log", float(self.rate_log))
        values = np.concatenate(
            [
                self.req_return,
                self.init_mean,
                self.drift,
                self.init_cov.ravel(),
                self.meas_cov.ravel(),
                self.state_cov.ravel(),
                [self.rate_log],
            ]
        )
        if not np.isfinite(values).all():
            raise DataValidationError("all parameter entries must be finite")

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)


@dataclass(frozen=True)
class ObservedSeries:
    """Observed data: initial book values, log growth rates, log payout ratios.

    ``growth[t]`` is the log book-value growth over period ``t + 1`` and
    ``payout_ratio[t]`` the log payout-to-previous-book ratio of the same
    period (both shape (T, 2), natural data order).
    """

    books0: np.ndarray
    growth: np.ndarray
    payout_ratio: np.ndarray

    def __post_init__(self):
        b0 = np.asarray(self.books0, dtype=float)
        if b0.shape != (2,) or not (b0 > 0).all():
            raise DataValidationError("books0 must be a strictly positive 2-vector")
        g = np.asarray(self.growth, dtype=float)
        p = np.asarray(self.payout_ratio, dtype=float)
        if g.ndim != 2 or g.shape[1] != 2 or g.shape[0] < 1:
            raise DataValidationError("growth must have shape (T, 2) with T >= 1")
        if p.shape != g.shape:
            raise DataValidationError("payout_ratio must match growth in shape")
        if not np.isfinite(g).all() or not np.isfinite(p).all():
            raise DataValidationError("growth and payout_ratio must be finite")
        object.__setattr__(self, "books0", _freeze(b0))
        object.__setattr__(self, "growth", _freeze(g))
        object.__setattr__(self, "payout_ratio", _freeze(p))

    @property
    def n_periods(self):
        return self.growth.shape[0]

    def log_books(self):
        """Log book values per period, shape (T + 1, 2)."""
        out = np.vstack([np.log(self.books0), self.growth]).cumsum(axis=0)
        return out


def derive_series(raw_books, raw_payouts):
    """Build an :class:`ObservedSeries` from raw book and payout levels.

    Parameters
    ----------
    raw_books : (T + 1, 2) array
        Book values of (equity, liability) at periods 0..T, strictly positive.
    raw_payouts : (T, 2) array
        Payout levels over periods 1..T, strictly positive.

    Raises
    ------
    DataValidationError
        Naming the offending cell when any input value is nonpositive.
    """
    books = np.asarray(raw_books, dtype=float)
    payouts = np.asarray(raw_payouts, dtype=float)
    if books.ndim != 2 or books.shape[1] != 2 or books.shape[0] < 2:
        raise DataValidationError("raw_books must have shape (T + 1, 2) with T >= 1")
    if payouts.shape != (books.shape[0] - 1, 2):
        raise DataValidationError("raw_payouts must have shape (T, 2)")
    for r, c in zip(*np.where(~(books > 0) | ~np.isfinite(books))):
        raise DataValidationError(
            f"book value at row {r}, {_COMPONENTS[c]} column must be strictly "
            f"positive and finite (got {books[r, c]!r})"
        )
    for r, c in zip(*np.where(~(payouts > 0) | ~np.isfinite(payouts))):
        raise DataValidationError(
            f"payout at row {r + 1}, {_COMPONENTS[c]} column must be strictly "
            f"positive and finite (got {payouts[r, c]!r})"
        )
    log_books = np.log(books)
    growth = np.diff(log_books, axis=0)
    payout_ratio = np.log(payouts) - log_books[:-1]
    return ObservedSeries(books[0], growth, payout_ratio)


def mean_log_multiplier(params, t):
    """Unconditional mean of the log multiplier at period ``t``: μ₀ + tφ."""
    if t < 0:
        raise DataValidationError("period index must be nonnegative")
    return params.init_mean + t * params.drift


@dataclass(frozen=True)
class LinearizationSchedule:
    """Per-period linearization constants, indexed by absolute period.

    Multiplier-level arrays (``gap``, ``gain``, ``shift``, ``center``,
    ``payout_ratio``) have shape (H + 1, 2) with row 0 unused. Asset-level
    arrays have shape (H + 1,) covering periods 0..H and are ``None`` until
    :func:`attach_asset_constants` fills them.
    """

    gap: np.ndarray
    gain: np.ndarray
    shift: np.ndarray
    center: np.ndarray
    payout_ratio: np.ndarray
    asset_center: np.ndarray = None
    asset_gain: np.ndarray = None
    asset_weight: np.ndarray = None
    asset_shift: np.ndarray = None

    @property
    def horizon(self):
        return self.gap.shape[0] - 1

    def gain_matrix(self, t):
        """Diagonal gain matrix G_t."""
        return np.diag(self.gain[t])

    def has_asset_constants(self):
        return self.asset_center is not None


def build_linearization_schedule(params, payout_ratio, horizon=None):
    """Compute per-period linearization constants for periods 1..H.

    The payout gap at period t is ϱ̃_t − k̃ − (μ₀ + (t − 1)φ); feasibility
    requires exp of it below one componentwise (expected payout below
    expected value). Then

        g_t = 1 / (1 − exp(gap)),
        h_t = −(gap·exp(gap) / (1 − exp(gap)) + ln(1 − exp(gap))),
        center μ_t = gap + ln(g_t),

    which satisfy h_t = g_t(ln g_t − μ_t) + μ_t.

    Raises
    ------
    InfeasibleLinearizationError
        If exp(gap) >= 1 in any component, naming period and component.
    """
    ratio = np.atleast_2d(np.asarray(payout_ratio, dtype=float))
    if horizon is None:
        horizon = ratio.shape[0]
    if ratio.shape != (horizon, 2):
        raise DataValidationError(
            f"payout_ratio must have shape ({horizon}, 2), got {ratio.shape}"
        )
    periods = np.arange(1, horizon + 1)
    gap = ratio - params.req_return - (
        params.init_mean + (periods - 1)[:, None] * params.drift
    )
    e = np.exp(gap)
    bad = np.argwhere(e >= 1.0)
    if bad.size:
        t, c = bad[0]
        raise InfeasibleLinearizationError(int(t) + 1, int(c), float(e[t, c]))
    gain = 1.0 / (1.0 - e)
    shift = -(gap * e / (1.0 - e) + np.log1p(-e))
    center = gap + np.log(gain)
    pad = np.full((1, 2), np.nan)
    return LinearizationSchedule(
        gap=_freeze(np.vstack([pad, gap])),
        gain=_freeze(np.vstack([pad, gain])),
        shift=_freeze(np.vstack([pad, shift])),
        center=_freeze(np.vstack([pad, center])),
        payout_ratio=_freeze(np.vstack([pad, ratio])),
    )


def asset_linearization(mu_a):
    """Linearization constants of the log asset value around center ``mu_a``.

    ``mu_a`` is the mean log equity-to-liability value gap. Returns
    (g_a, w_a, h_a) with g_a = 1 + exp(mu_a), w_a = 1 / g_a and
    h_a = g_a(ln g_a − mu_a) + mu_a.
    """
    g = 1.0 + np.exp(mu_a)
    w = 1.0 / g
    h = g * (np.log(g) - mu_a) + mu_a
    return g, w, h


def asset_weight_vector(w_a):
    """Weight vector applied to (log equity, log liability) values.

    The tangent of ln(Vᵉ + Vˡ) at the center puts weight 1 − w_a on the
    equity leg and w_a on the liability leg; the approximation is
    w̄′(Ṽᵉ, Ṽˡ) + w_a·h_a, exact at the center with quadratic error.
    """
    w_a = np.asarray(w_a)
    return np.stack([1.0 - w_a, w_a], axis=-1)


def linearized_log_asset(log_values, w_a, h_a):
    """Apply the asset tangent: w̄′Ṽ + w_a h_a along the last axis."""
    weights = asset_weight_vector(w_a)
    return (weights * log_values).sum(axis=-1) + w_a * h_a


def asset_center(params, log_books_t, t):
    """Mean log equity-to-liability value gap at period ``t``.

    Uses plug-in log books (observed within the sample, forecast beyond).
    """
    mean_mult = mean_log_multiplier(params, t)
    lb = np.asarray(log_books_t, dtype=float)
    return float(mean_mult[0] - mean_mult[1] + lb[0] - lb[1])


def attach_asset_constants(schedule, params, log_books):
    """Return a copy of ``schedule`` with asset-level constants filled.

    Parameters
    ----------
    log_books : (H + 1, 2) array
        Plug-in log book values for periods 0..H.
    """
    lb = np.asarray(log_books, dtype=float)
    if lb.shape != (schedule.horizon + 1, 2):
        raise DataValidationError(
            f"log_books must have shape ({schedule.horizon + 1}, 2), got {lb.shape}"
        )
    t = np.arange(schedule.horizon + 1)
    mean_mult = params.init_mean + t[:, None] * params.drift
    mu_a = mean_mult[:, 0] - mean_mult[:, 1] + lb[:, 0] - lb[:, 1]
    g_a, w_a, h_a = asset_linearization(mu_a)
    return dataclasses.replace(
        schedule,
        asset_center=_freeze(mu_a),
        asset_gain=_freeze(g_a),
        asset_weight=_freeze(w_a),
        asset_shift=_freeze(h_a),
    )


def real_intercepts(params, schedule):
    """Real-measure measurement intercepts c_t, shape (H + 1, 2), row 0 NaN."""
    g = schedule.gain
    return g * params.req_return - (g - 1.0) * schedule.payout_ratio - schedule.shift


def risk_neutral_intercepts(params, schedule):
    """Risk-neutral intercepts c̃_t: required returns swapped for the risk-free
    rate plus a convexity correction from the measurement noise."""
    g = schedule.gain
    return (
        params.rate_log * g
        - (g - 1.0) * schedule.payout_ratio
        - schedule.shift
        - 0.5 * np.diag(params.meas_cov) / g
    )
