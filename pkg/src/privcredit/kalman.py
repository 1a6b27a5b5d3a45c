"""Exact filtering, smoothing and forecasting for the latent multiplier.

State-space form: the state stacks the current and previous log multiplier,
z_t = (m̃_t', m̃_{t-1}')'. The transition is

    z_t = A z_{t-1} + a + η_t,   A = [[I, 0], [I, 0]],  a = (φ', 0')',

with η_t = (v_t', 0')' and block covariance diag(Σ_v, 0). The observation is
the 2-vector of log book growth,

    b̃_t = Ψ_t z_t + c_t + u_t,   Ψ_t = [-I | G_t]  (2x4),

so innovation covariances stay 2x2 and invertible. All covariance updates
are re-symmetrized to bound floating-point drift. Intercepts enter means
only; gains and covariances are intercept-free.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError, IllConditionedInnovationError

_I2 = np.eye(2)
_RCOND = 1e-13


def _sym(m):
    return 0.5 * (m + m.T)


def _transition(params):
    A = np.zeros((4, 4))
    A[:2, :2] = _I2
    A[2:, :2] = _I2
    a = np.concatenate([params.drift, np.zeros(2)])
    cov_eta = np.zeros((4, 4))
    cov_eta[:2, :2] = params.state_cov
    return A, a, cov_eta


def _measurement(schedule, t):
    psi = np.zeros((2, 4))
    psi[:, :2] = -_I2
    psi[0, 2] = schedule.gain[t, 0]
    psi[1, 3] = schedule.gain[t, 1]
    return psi


def _solve_spd2(s, rhs):
    """Solve the 2x2 SPD system s @ x = rhs with a conditioning guard."""
    det = s[0, 0] * s[1, 1] - s[0, 1] * s[1, 0]
    trace = s[0, 0] + s[1, 1]
    disc = max(trace * trace - 4.0 * det, 0.0)
    lam_min = 0.5 * (trace - np.sqrt(disc))
    if not np.isfinite(det) or det <= 0.0 or lam_min <= _RCOND * max(trace, 1e-300):
        raise IllConditionedInnovationError(
            f"innovation covariance numerically singular (det={det:.3e})"
        )
    inv = np.array([[s[1, 1], -s[0, 1]], [-s[1, 0], s[0, 0]]]) / det
    return inv @ rhs, det


@dataclass(frozen=True)
class StateSpaceSystem:
    """One period's system matrices.

    The state stacks the current and previous multiplier, so the transition
    matrix reads the top block twice and the state noise covariance has rank
    at most two. The measurement is a genuine 2-vector (top block of the
    stacked form) so innovation covariances stay invertible.
    """

    measurement: np.ndarray
    intercept: np.ndarray
    transition: np.ndarray
    transition_intercept: np.ndarray
    meas_cov: np.ndarray
    state_noise_cov: np.ndarray


def state_space_system(params, schedule, intercepts, t):
    """Assemble the period-``t`` system matrices."""
    A, a, cov_eta = _transition(params)
    return StateSpaceSystem(
        measurement=_measurement(schedule, t),
        intercept=np.asarray(intercepts[t], dtype=float),
        transition=A,
        transition_intercept=a,
        meas_cov=params.meas_cov,
        state_noise_cov=cov_eta,
    )


@dataclass(frozen=True)
class FilterOutput:
    """Forward-pass moments, indexed by absolute period 0..T.

    Row 0 of ``z_filt`` / ``cov_z_filt`` holds the initialization; rows of
    the prediction arrays are unused at index 0.
    """

    z_pred: np.ndarray
    cov_z_pred: np.ndarray
    b_pred: np.ndarray
    cov_b_pred: np.ndarray
    gain: np.ndarray
    z_filt: np.ndarray
    cov_z_filt: np.ndarray
    loglik_terms: np.ndarray
    loglik: float
    intercepts: np.ndarray

    @property
    def n_periods(self):
        return self.z_pred.shape[0] - 1

    def multiplier_mean(self, t):
        """Filtered mean of the log multiplier at period t."""
        return self.z_filt[t, :2]

    def multiplier_cov(self, t):
        """Filtered covariance of the log multiplier at period t."""
        return self.cov_z_filt[t, :2, :2]


@dataclass(frozen=True)
class SmootherOutput:
    """Backward-pass moments. ``cross_cov[t]`` is Cov(z_t, z_{t+1} | all data)
    (defined for t = 0..T-1) and ``cross_m[t]`` is Cov(m̃_{t-1}, m̃_t | all
    data) (defined for t = 1..T)."""

    z_smooth: np.ndarray
    cov_z_smooth: np.ndarray
    gain_smooth: np.ndarray
    cross_cov: np.ndarray
    m_smooth: np.ndarray
    cov_m_smooth: np.ndarray
    cross_m: np.ndarray


@dataclass(frozen=True)
class ForecastOutput:
    """Out-of-sample moments for periods T+1..H (rows 0..T unused)."""

    z_mean: np.ndarray
    cov_z: np.ndarray
    b_mean: np.ndarray
    cov_b: np.ndarray
    start: int


def init_filter(params):
    """Initialization: duplicated prior mean and block-diagonal prior cov."""
    z0 = np.concatenate([params.init_mean, params.init_mean])
    cov0 = np.zeros((4, 4))
    cov0[:2, :2] = params.init_cov
    cov0[2:, 2:] = params.init_cov
    return z0, cov0


def predict_step(z_filt, cov_filt, params, schedule, t, intercept_t):
    """One prediction step: propagate state moments and map to observation."""
    A, a, cov_eta = _transition(params)
    psi = _measurement(schedule, t)
    z_pred = A @ z_filt + a
    cov_z = _sym(A @ cov_filt @ A.T + cov_eta)
    b_pred = psi @ z_pred + intercept_t
    cov_b = _sym(psi @ cov_z @ psi.T + params.meas_cov)
    return z_pred, cov_z, b_pred, cov_b


def correct_step(z_pred, cov_z_pred, b_pred, cov_b_pred, obs, schedule, t):
    """One correction step; returns (gain, filtered mean, filtered cov).

    Raises on a singular innovation covariance; no pseudo-inverse fallback.
    """
    psi = _measurement(schedule, t)
    cross = cov_z_pred @ psi.T
    solved, _ = _solve_spd2(cov_b_pred, cross.T)
    gain = solved.T
    innov = obs - b_pred
    z_filt = z_pred + gain @ innov
    cov_filt = _sym(cov_z_pred - gain @ cov_b_pred @ gain.T)
    return gain, z_filt, cov_filt


def run_filter(params, schedule, growth, intercepts):
    """Full forward pass over the sample.

    Parameters
    ----------
    growth : (T, 2) array
        Observed log book growth, natural order (row 0 is period 1).
    intercepts : (H + 1, 2) array
        Measurement intercepts by absolute period (real or risk-neutral).

    Returns
    -------
    FilterOutput
        With the Gaussian prediction-error log-likelihood accumulated over
        the sample.
    """
    growth = np.asarray(growth, dtype=float)
    T = growth.shape[0]
    if schedule.horizon < T:
        raise DataValidationError("schedule does not cover the sample")
    z_pred = np.zeros((T + 1, 4))
    cov_z_pred = np.zeros((T + 1, 4, 4))
    b_pred = np.zeros((T + 1, 2))
    cov_b_pred = np.zeros((T + 1, 2, 2))
    gain = np.zeros((T + 1, 4, 2))
    z_filt = np.zeros((T + 1, 4))
    cov_z_filt = np.zeros((T + 1, 4, 4))
    ll = np.zeros(T + 1)

    z_filt[0], cov_z_filt[0] = init_filter(params)
    log2pi = np.log(2.0 * np.pi)
    for t in range(1, T + 1):
        z_pred[t], cov_z_pred[t], b_pred[t], cov_b_pred[t] = predict_step(
            z_filt[t - 1], cov_z_filt[t - 1], params, schedule, t, intercepts[t]
        )
        gain[t], z_filt[t], cov_z_filt[t] = correct_step(
            z_pred[t], cov_z_pred[t], b_pred[t], cov_b_pred[t],
            growth[t - 1], schedule, t,
        )
        innov = growth[t - 1] - b_pred[t]
        solved, det = _solve_spd2(cov_b_pred[t], innov)
        ll[t] = -log2pi - 0.5 * np.log(det) - 0.5 * innov @ solved
    return FilterOutput(
        z_pred=z_pred, cov_z_pred=cov_z_pred, b_pred=b_pred,
        cov_b_pred=cov_b_pred, gain=gain, z_filt=z_filt,
        cov_z_filt=cov_z_filt, loglik_terms=ll, loglik=float(ll.sum()),
        intercepts=np.asarray(intercepts, dtype=float),
    )


def _smoother_gain(cov_filt):
    """Smoother gain for the stacked state.

    The predicted covariance factors through the filtered multiplier block
    P11 = Cov(m̃_t | data to t); the gain reduces to [[0, X1], [0, X2]] with
    X1 P11 = P11 and X2 P11 = P21, so only the structurally nonsingular
    block is inverted. A pseudo-inverse handles the degenerate (zero state
    noise at the start) case, where the gain correctly vanishes.
    """
    p11 = cov_filt[:2, :2]
    p21 = cov_filt[2:, :2]
    det = p11[0, 0] * p11[1, 1] - p11[0, 1] * p11[1, 0]
    trace = p11[0, 0] + p11[1, 1]
    gain = np.zeros((4, 4))
    if det > _RCOND * max(trace, 1e-300) ** 2 and trace > 0:
        inv = np.array([[p11[1, 1], -p11[0, 1]], [-p11[1, 0], p11[0, 0]]]) / det
        gain[:2, 2:] = _I2
        gain[2:, 2:] = p21 @ inv
    else:
        pinv = np.linalg.pinv(p11, rcond=1e-12, hermitian=True)
        gain[:2, 2:] = p11 @ pinv
        gain[2:, 2:] = p21 @ pinv
    return gain


def smooth(filter_output, params):
    """Backward recursion: smoothed moments and lag-one cross-covariances."""
    T = filter_output.n_periods
    z_smooth = np.zeros((T + 1, 4))
    cov_z_smooth = np.zeros((T + 1, 4, 4))
    gain_smooth = np.zeros((T + 1, 4, 4))
    cross_cov = np.zeros((T + 1, 4, 4))

    z_smooth[T] = filter_output.z_filt[T]
    cov_z_smooth[T] = filter_output.cov_z_filt[T]
    for t in range(T - 1, -1, -1):
        s = _smoother_gain(filter_output.cov_z_filt[t])
        gain_smooth[t] = s
        z_smooth[t] = filter_output.z_filt[t] + s @ (
            z_smooth[t + 1] - filter_output.z_pred[t + 1]
        )
        cov_z_smooth[t] = _sym(
            filter_output.cov_z_filt[t]
            - s @ (filter_output.cov_z_pred[t + 1] - cov_z_smooth[t + 1]) @ s.T
        )
        cross_cov[t] = s @ cov_z_smooth[t + 1]

    m_smooth = z_smooth[:, :2].copy()
    cov_m = cov_z_smooth[:, :2, :2].copy()
    cross_m = np.zeros((T + 1, 2, 2))
    cross_m[1:] = cross_cov[:-1, :2, :2]
    return SmootherOutput(
        z_smooth=z_smooth, cov_z_smooth=cov_z_smooth, gain_smooth=gain_smooth,
        cross_cov=cross_cov, m_smooth=m_smooth, cov_m_smooth=cov_m,
        cross_m=cross_m,
    )


def forecast(filter_output, params, schedule, horizon):
    """Conditional moments for periods T+1..horizon given the sample.

    Uses the same intercept array the filter ran with.
    """
    T = filter_output.n_periods
    if horizon <= T:
        raise DataValidationError("forecast horizon must exceed the sample length")
    if schedule.horizon < horizon:
        raise DataValidationError("schedule does not cover the forecast horizon")
    A, a, cov_eta = _transition(params)
    z = np.zeros((horizon + 1, 4))
    cov_z = np.zeros((horizon + 1, 4, 4))
    b = np.zeros((horizon + 1, 2))
    cov_b = np.zeros((horizon + 1, 2, 2))
    z_prev = filter_output.z_filt[T]
    cov_prev = filter_output.cov_z_filt[T]
    for t in range(T + 1, horizon + 1):
        psi = _measurement(schedule, t)
        z[t] = A @ z_prev + a
        cov_z[t] = _sym(A @ cov_prev @ A.T + cov_eta)
        b[t] = psi @ z[t] + filter_output.intercepts[t]
        cov_b[t] = _sym(psi @ cov_z[t] @ psi.T + params.meas_cov)
        z_prev, cov_prev = z[t], cov_z[t]
    return ForecastOutput(z_mean=z, cov_z=cov_z, b_mean=b, cov_b=cov_b, start=T + 1)
