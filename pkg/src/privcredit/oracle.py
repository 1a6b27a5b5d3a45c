"""Brute-force Gaussian conditioning oracle.

Builds the exact joint normal distribution of all log multipliers and all
observed log book growth rates as one explicit linear map of the primitive
noise, then answers filtering / smoothing / forecasting questions by dense
block conditioning. Everything the recursive code computes must agree with
this object; it is deliberately simple and O((2(2H+1))^3), guarded to short
samples.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from .errors import DataValidationError

_MAX_PERIODS = 8


@dataclass(frozen=True)
class ConditionalMoments:
    mean: np.ndarray
    cov: np.ndarray


class GaussianConditioningOracle:
    """Exact joint Gaussian of multipliers and observations.

    Parameters
    ----------
    params, schedule : model objects covering periods 1..H.
    growth : (T, 2) array
        Observed log book growth (T <= 8 enforced, cost guard).
    intercepts : (H + 1, 2) array
        Measurement intercepts by absolute period.
    horizon : int, optional
        Last period included in the joint (defaults to T; set larger to
        query forecast moments).
    """

    def __init__(self, params, schedule, growth, intercepts, horizon=None):
        growth = np.asarray(growth, dtype=float)
        T = growth.shape[0]
        if T > _MAX_PERIODS:
            raise DataValidationError(
                f"oracle limited to {_MAX_PERIODS} periods, got {T}"
            )
        H = T if horizon is None else int(horizon)
        if H < T or schedule.horizon < H:
            raise DataValidationError("horizon must satisfy T <= horizon <= schedule")
        self.n_obs = T
        self.horizon = H
        self.growth = growth

        dim = 2 * (2 * H + 1)
        base_cov = np.zeros((dim, dim))
        base_cov[0:2, 0:2] = params.init_cov
        for s in range(1, H + 1):
            i = 2 * s
            base_cov[i : i + 2, i : i + 2] = params.state_cov
            j = 2 * (H + s)
            base_cov[j : j + 2, j : j + 2] = params.meas_cov

        # multiplier rows: m_t = m_0 + t*drift + sum_{s<=t} v_s
        lin = np.zeros((dim, dim))
        mean = np.zeros(dim)
        for t in range(0, H + 1):
            r = 2 * t
            lin[r : r + 2, 0:2] = np.eye(2)
            for s in range(1, t + 1):
                lin[r : r + 2, 2 * s : 2 * s + 2] = np.eye(2)
            mean[r : r + 2] = params.init_mean + t * params.drift
        # observation rows: b_t = -m_t + G_t m_{t-1} + c_t + u_t
        for t in range(1, H + 1):
            r = 2 * (H + 1) + 2 * (t - 1)
            G = schedule.gain_matrix(t)
            lin[r : r + 2] = -lin[2 * t : 2 * t + 2] + G @ lin[2 * (t - 1) : 2 * t]
            lin[r : r + 2, 2 * (H + t) : 2 * (H + t) + 2] = np.eye(2)
            mean[r : r + 2] = (
                -mean[2 * t : 2 * t + 2]
                + G @ mean[2 * (t - 1) : 2 * t]
                + intercepts[t]
            )

        self.mean = mean
        self.cov = 0.5 * ((lin @ base_cov @ lin.T) + (lin @ base_cov @ lin.T).T)

    # index helpers ------------------------------------------------------
    def _m_idx(self, t):
        return [2 * t, 2 * t + 1]

    def _z_idx(self, t):
        return self._m_idx(t) + self._m_idx(t - 1)

    def _b_idx(self, t):
        base = 2 * (self.horizon + 1)
        return [base + 2 * (t - 1), base + 2 * (t - 1) + 1]

    def _obs_idx(self, upto):
        out = []
        for t in range(1, upto + 1):
            out.extend(self._b_idx(t))
        return out

    # conditioning -------------------------------------------------------
    def conditional(self, target_idx, n_obs):
        """Moments of the target coordinates given the first n_obs growth rows."""
        ti = list(target_idx)
        if n_obs == 0:
            return ConditionalMoments(self.mean[ti], self.cov[np.ix_(ti, ti)])
        oi = self._obs_idx(n_obs)
        obs = self.growth[:n_obs].ravel()
        s_oo = self.cov[np.ix_(oi, oi)]
        s_to = self.cov[np.ix_(ti, oi)]
        sol = np.linalg.solve(s_oo, np.vstack([(obs - self.mean[oi]), s_to]).T)
        mean = self.mean[ti] + s_to @ sol[:, 0]
        cov = self.cov[np.ix_(ti, ti)] - s_to @ sol[:, 1:]
        return ConditionalMoments(mean, 0.5 * (cov + cov.T))

    def filtered_m(self, t):
        return self.conditional(self._m_idx(t), min(t, self.n_obs))

    def filtered_z(self, t):
        return self.conditional(self._z_idx(t), min(t, self.n_obs))

    def predicted_z(self, t):
        return self.conditional(self._z_idx(t), min(t - 1, self.n_obs))

    def predicted_b(self, t):
        return self.conditional(self._b_idx(t), min(t - 1, self.n_obs))

    def smoothed_m(self, t):
        return self.conditional(self._m_idx(t), self.n_obs)

    def smoothed_z(self, t):
        return self.conditional(self._z_idx(t), self.n_obs)

    def smoothed_z_pair(self, t):
        """Joint of (z_t, z_{t+1}) given the full sample (8-dim)."""
        return self.conditional(self._z_idx(t) + self._z_idx(t + 1), self.n_obs)

    def smoothed_m_pair(self, t):
        """Joint of (m̃_{t-1}, m̃_t) given the full sample (4-dim)."""
        return self.conditional(self._m_idx(t - 1) + self._m_idx(t), self.n_obs)

    def forecast_b(self, t):
        return self.conditional(self._b_idx(t), self.n_obs)

    def loglik(self):
        """Log density of the observed growth stack under the joint law."""
        oi = self._obs_idx(self.n_obs)
        return float(
            multivariate_normal(
                mean=self.mean[oi], cov=self.cov[np.ix_(oi, oi)]
            ).logpdf(self.growth.ravel())
        )
