"""Maximum-likelihood estimation via the EM zig-zag iteration.

Each iteration rebuilds the linearization schedule at the current parameter
vector, runs the filter and smoother (E-step), then maximizes the expected
complete-data log-likelihood exactly with the schedule held frozen (M-step).
Freezing makes this a generalized EM: the frozen objective never decreases,
which is the ascent property tested downstream. The schedule's own parameter
sensitivity shows up only in the analytic gradient of the schedule-varying
objective, kept here as a diagnostic (`complete_loglik_gradient`) and
validated against finite differences.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError, DegenerateDesignError
from .kalman import run_filter, smooth
from .model import ModelParams, build_linearization_schedule, real_intercepts

_LOG2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class SmoothedStats:
    """Smoothed moments and residuals from one E-step.

    Residual arrays are indexed by absolute period with row 0 unused and are
    evaluated at the parameters recorded in ``params_at``; the underlying
    smoothed moments (``m_smooth``, ``cov_m``, ``cross_m``) are parameter-free
    and support re-evaluating the objective at any candidate parameter
    vector. ``cross_m[t]`` is Cov(m̃_{t-1}, m̃_t | full sample).
    """

    m_smooth: np.ndarray
    cov_m: np.ndarray
    cross_m: np.ndarray
    u_res: np.ndarray
    v_res: np.ndarray
    d_res: np.ndarray
    z_mat: np.ndarray
    e_uu: np.ndarray
    e_vv: np.ndarray
    growth: np.ndarray
    payout_ratio: np.ndarray
    loglik: float
    params_at: ModelParams

    @property
    def n_periods(self):
        return self.growth.shape[0]


@dataclass
class EmTrace:
    """Per-iteration bookkeeping of the zig-zag iteration."""

    params: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    lambda_before: list = field(default_factory=list)
    lambda_after: list = field(default_factory=list)
    max_change: list = field(default_factory=list)
    termination: str = ""

    @property
    def n_iterations(self):
        return len(self.max_change)


def _chol_inv_logdet(m, name):
    try:
        c = np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise DataValidationError(f"{name} must be positive definite") from None
    inv = np.linalg.inv(m)
    logdet = 2.0 * np.log(np.diag(c)).sum()
    return inv, logdet


def _gaussian_block_term(cov, second_moments, count, name):
    """Contribution of one Gaussian noise block to the expected joint
    log-density: normalization plus expected quadratic form.

    An exactly-zero covariance is a point mass: it contributes nothing
    provided the matching second moments vanish too, and is rejected
    otherwise (the density does not exist off its support).
    """
    if not np.any(cov):
        worst = max(np.abs(m).max() for m in second_moments)
        if worst > 1e-12:
            raise DataValidationError(
                f"{name} is degenerate (zero) but residual moments are not"
            )
        return 0.0
    inv, logdet = _chol_inv_logdet(cov, name)
    quad = sum(np.trace(inv @ m) for m in second_moments)
    return -count * _LOG2PI - 0.5 * count * logdet - 0.5 * quad


def _measurement_residual_cov(cov_m, cross_m, gain_t, t):
    """Var(m̃_t − G_t m̃_{t-1} | full sample) from the m-block moments."""
    g = gain_t
    return (
        cov_m[t]
        + g[:, None] * cov_m[t - 1] * g[None, :]
        - cross_m[t].T * g[None, :]
        - g[:, None] * cross_m[t]
    )


def _state_residual_cov(cov_m, cross_m, t):
    """Var(m̃_t − m̃_{t-1} | full sample)."""
    return cov_m[t] + cov_m[t - 1] - cross_m[t] - cross_m[t].T


def _residual_pieces(params, schedule, m_smooth, cov_m, cross_m, growth,
                     payout_ratio):
    """Residuals and second-moment corrections at the given parameters."""
    T = growth.shape[0]
    periods = np.arange(1, T + 1)
    g = schedule.gain[1 : T + 1]
    h = schedule.shift[1 : T + 1]
    c = (g * params.req_return - (g - 1.0) * payout_ratio - h)
    u = growth + m_smooth[1:] - g * m_smooth[:-1] - c
    v = m_smooth[1:] - params.drift - m_smooth[:-1]
    centers = params.init_mean + (periods - 1)[:, None] * params.drift
    d = g * (g - 1.0) * (m_smooth[:-1] - centers)
    z = np.empty((T, 2, 2))
    e_uu = np.empty((T, 2, 2))
    e_vv = np.empty((T, 2, 2))
    gg = g * (g - 1.0)
    for t in range(1, T + 1):
        i = t - 1
        z[i] = gg[i][:, None] * (cross_m[t] - cov_m[t - 1] * g[i][None, :])
        e_uu[i] = np.outer(u[i], u[i]) + _measurement_residual_cov(
            cov_m, cross_m, g[i], t
        )
        e_vv[i] = np.outer(v[i], v[i]) + _state_residual_cov(cov_m, cross_m, t)
    return u, v, d, z, e_uu, e_vv


def e_step(params, series, schedule=None):
    """Run filter and smoother under real-measure intercepts; collect stats."""
    if schedule is None:
        schedule = build_linearization_schedule(
            params, series.payout_ratio, series.n_periods
        )
    intercepts = real_intercepts(params, schedule)
    filt = run_filter(params, schedule, series.growth, intercepts)
    smo = smooth(filt, params)
    pad2 = np.zeros((1, 2))
    pad22 = np.zeros((1, 2, 2))
    u, v, d, z, e_uu, e_vv = _residual_pieces(
        params, schedule, smo.m_smooth, smo.cov_m_smooth, smo.cross_m,
        series.growth, series.payout_ratio,
    )
    return SmoothedStats(
        m_smooth=smo.m_smooth,
        cov_m=smo.cov_m_smooth,
        cross_m=smo.cross_m,
        u_res=np.vstack([pad2, u]),
        v_res=np.vstack([pad2, v]),
        d_res=np.vstack([pad2, d]),
        z_mat=np.concatenate([pad22, z]),
        e_uu=np.concatenate([pad22, e_uu]),
        e_vv=np.concatenate([pad22, e_vv]),
        growth=series.growth,
        payout_ratio=series.payout_ratio,
        loglik=filt.loglik,
        params_at=params,
    )


def expected_complete_loglik(params, stats, schedule=None):
    """Expected complete-data log-likelihood at ``params``.

    With ``schedule`` given, the linearization constants are held frozen at
    that schedule (the M-step objective); with ``schedule=None`` they are
    rebuilt from ``params`` so the objective carries its full parameter
    dependence. Exactly-zero noise blocks with vanishing residual moments
    contribute nothing (deterministic limits).
    """
    T = stats.n_periods
    if schedule is None:
        schedule = build_linearization_schedule(
            params, stats.payout_ratio, T
        )
    u, v, _, _, e_uu, e_vv = _residual_pieces(
        params, schedule, stats.m_smooth, stats.cov_m, stats.cross_m,
        stats.growth, stats.payout_ratio,
    )
    diff0 = stats.m_smooth[0] - params.init_mean
    term_u = _gaussian_block_term(params.meas_cov, list(e_uu), T, "meas_cov")
    term_v = _gaussian_block_term(params.state_cov, list(e_vv), T, "state_cov")
    term_0 = _gaussian_block_term(
        params.init_cov, [stats.cov_m[0] + np.outer(diff0, diff0)], 1, "init_cov"
    )
    return float(term_u + term_v + term_0)


def complete_loglik_gradient(params, stats):
    """Analytic gradient of the schedule-varying objective.

    Returns the 6-vector of derivatives in (required returns, initial mean,
    drift). The schedule terms contribute through the payout-gap sensitivity
    d_t = G_t(G_t − I)(m̃_{t-1|T} − center) and the smoothed covariance
    cross-term; validated against central finite differences.
    """
    T = stats.n_periods
    schedule = build_linearization_schedule(params, stats.payout_ratio, T)
    inv_u, _ = _chol_inv_logdet(params.meas_cov, "meas_cov")
    inv_v, _ = _chol_inv_logdet(params.state_cov, "state_cov")
    inv_0, _ = _chol_inv_logdet(params.init_cov, "init_cov")
    u, v, d, z, _, _ = _residual_pieces(
        params, schedule, stats.m_smooth, stats.cov_m, stats.cross_m,
        stats.growth, stats.payout_ratio,
    )
    g = schedule.gain[1 : T + 1]
    grad_k = np.zeros(2)
    grad_mu0 = np.zeros(2)
    grad_phi = np.zeros(2)
    for i in range(T):
        e_du = z[i] + np.outer(d[i], u[i])
        e_dgu = z[i] + np.outer(d[i] - g[i], u[i])
        grad_k -= np.diag(e_dgu @ inv_u)
        diag_du = np.diag(e_du @ inv_u)
        grad_mu0 -= diag_du
        grad_phi -= i * diag_du
    grad_mu0 += inv_0 @ (stats.m_smooth[0] - params.init_mean)
    grad_phi += inv_v @ v.sum(axis=0)
    return np.concatenate([grad_k, grad_mu0, grad_phi])


def m_step(stats, schedule, params, inner_tol=1e-13, inner_max=200):
    """Exact maximizer of the frozen-schedule objective.

    The initial mean and drift updates are closed-form in the smoothed
    moments; the required-return update solves the gain-weighted normal
    equations and is iterated to a joint fixed point with the measurement
    covariance so that the full frozen-schedule gradient vanishes at the
    output. Covariance estimates are symmetrized time averages of the
    smoothed second moments and are PSD by construction.
    """
    T = stats.n_periods
    m = stats.m_smooth
    g = schedule.gain[1 : T + 1]
    h = schedule.shift[1 : T + 1]
    ratio = stats.payout_ratio

    if np.abs(g - 1.0).max() < 1e-6:
        warnings.warn(
            "all linearization gains are ~1 (negligible payouts); required "
            "returns are weakly identified",
            stacklevel=2,
        )

    mu0_new = m[0].copy()
    cov0_new = 0.5 * (stats.cov_m[0] + stats.cov_m[0].T)
    phi_new = (m[T] - m[0]) / T

    v = m[1:] - phi_new - m[:-1]
    vcov = sum(
        _state_residual_cov(stats.cov_m, stats.cross_m, t) for t in range(1, T + 1)
    )
    cov_v_new = (v.T @ v + vcov) / T
    cov_v_new = 0.5 * (cov_v_new + cov_v_new.T)

    # residual with the required-return term removed
    u_free = stats.growth + m[1:] - g * m[:-1] + (g - 1.0) * ratio + h
    ucov = sum(
        _measurement_residual_cov(stats.cov_m, stats.cross_m, g[t - 1], t)
        for t in range(1, T + 1)
    )
    cov_u = params.meas_cov.copy()
    k_new = params.req_return.copy()
    for _ in range(inner_max):
        try:
            inv_u = np.linalg.inv(cov_u)
        except np.linalg.LinAlgError:
            raise DegenerateDesignError(
                "measurement covariance collapsed during the update"
            ) from None
        normal = inv_u * (g[:, None, :] * g[:, :, None]).sum(axis=0)
        rhs = (g * (u_free @ inv_u)).sum(axis=0)
        if np.linalg.cond(normal) > 1e12:
            raise DegenerateDesignError(
                "required-return normal equations numerically singular"
            )
        k_cand = np.linalg.solve(normal, rhs)
        u = u_free - g * k_cand
        cov_u_cand = (u.T @ u + ucov) / T
        cov_u_cand = 0.5 * (cov_u_cand + cov_u_cand.T)
        done = (
            np.abs(k_cand - k_new).max() < inner_tol
            and np.abs(cov_u_cand - cov_u).max() < inner_tol
        )
        k_new, cov_u = k_cand, cov_u_cand
        if done:
            break

    for name, cov in (("meas", cov_u), ("state", cov_v_new)):
        if np.linalg.eigvalsh(cov).min() < 1e-14:
            warnings.warn(f"{name} covariance update is singular (degenerate fit)",
                          stacklevel=2)
    return params.replace(
        req_return=k_new, init_mean=mu0_new, init_cov=cov0_new,
        drift=phi_new, meas_cov=cov_u, state_cov=cov_v_new,
    )


def _param_change(old, new):
    pairs = (
        (old.req_return, new.req_return),
        (old.init_mean, new.init_mean),
        (old.drift, new.drift),
        (old.init_cov, new.init_cov),
        (old.meas_cov, new.meas_cov),
        (old.state_cov, new.state_cov),
    )
    return max(np.abs(a - b).max() for a, b in pairs)


def default_initial_params(series, rate_log):
    """Deterministic default starting point (overridable by the caller)."""
    return ModelParams(
        req_return=np.full(2, rate_log + 0.02),
        init_mean=np.zeros(2),
        init_cov=np.eye(2),
        drift=np.zeros(2),
        meas_cov=0.01 * np.eye(2),
        state_cov=0.01 * np.eye(2),
        rate_log=rate_log,
    )


def _blend_params(old, new, weight):
    if weight == 1.0:
        return new
    mix = lambda a, b: (1.0 - weight) * a + weight * b
    return old.replace(
        req_return=mix(old.req_return, new.req_return),
        init_mean=mix(old.init_mean, new.init_mean),
        drift=mix(old.drift, new.drift),
        init_cov=mix(old.init_cov, new.init_cov),
        meas_cov=mix(old.meas_cov, new.meas_cov),
        state_cov=mix(old.state_cov, new.state_cov),
    )


def _observed_loglik(params, series):
    schedule = build_linearization_schedule(
        params, series.payout_ratio, series.n_periods
    )
    filt = run_filter(
        params, schedule, series.growth, real_intercepts(params, schedule)
    )
    return filt.loglik


def em_fit(series, params_init=None, rate_log=0.0, max_iter=200, tol=1e-8):
    """Alternate schedule rebuild, E-step and frozen-schedule M-step.

    The linearization constants are very sensitive to the drift on long
    samples (the payout gap moves by (t-1) times any drift perturbation),
    so a full M-step can leave the feasible region or lower the observed
    likelihood once the schedule is refreshed. Each accepted step is
    therefore the longest step toward the M-step output that keeps the
    schedule feasible, does not decrease the frozen-schedule objective, and
    does not decrease the observed likelihood; the frozen objective is
    exactly non-decreasing along this segment, so the generalized-EM ascent
    property is preserved.

    Stops when the largest absolute parameter change falls below ``tol``,
    when no acceptable step remains ("stalled"), or after ``max_iter``
    iterations. An infeasible schedule at entry aborts with the last
    feasible parameters and a diagnostic on the trace.

    Returns
    -------
    (ModelParams, EmTrace)
    """
    params = params_init or default_initial_params(series, rate_log)
    trace = EmTrace()
    trace.params.append(params)
    for _ in range(max_iter):
        try:
            schedule = build_linearization_schedule(
                params, series.payout_ratio, series.n_periods
            )
        except Exception as exc:  # infeasible starting point: keep last fit
            trace.termination = f"aborted: {exc}"
            return params, trace
        stats = e_step(params, series, schedule)
        lambda_before = expected_complete_loglik(params, stats, schedule)
        full_step = m_step(stats, schedule, params)

        weight = 1.0
        accepted = None
        lambda_after = lambda_before
        ll_slack = 1e-8 * max(1.0, abs(stats.loglik))
        while weight > 1e-6:
            candidate = _blend_params(params, full_step, weight)
            try:
                lam = expected_complete_loglik(candidate, stats, schedule)
                if lam < lambda_before - 1e-9:
                    raise ValueError("frozen objective decreased")
                if _observed_loglik(candidate, series) < stats.loglik - ll_slack:
                    raise ValueError("observed likelihood decreased")
            except Exception:
                weight *= 0.5
                continue
            accepted, lambda_after = candidate, lam
            break

        trace.loglik.append(stats.loglik)
        trace.lambda_before.append(lambda_before)
        trace.lambda_after.append(lambda_after)
        if accepted is None:
            trace.max_change.append(0.0)
            trace.params.append(params)
            trace.termination = "stalled"
            return params, trace
        change = _param_change(params, accepted)
        trace.max_change.append(change)
        trace.params.append(accepted)
        params = accepted
        if change < tol:
            trace.termination = "converged"
            return params, trace
    trace.termination = "max_iter"
    return params, trace


def smoothed_market_values(stats, series):
    """Smoothed market values: componentwise exp(m̃_{t|T}) times book values."""
    books = np.exp(series.log_books())
    return np.exp(stats.m_smooth) * books
