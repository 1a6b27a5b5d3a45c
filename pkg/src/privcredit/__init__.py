"""Structural credit risk engine for private companies.

Estimates latent market-value multipliers from observed book values by
Kalman filtering and EM, then computes risk-neutral equity/debt values,
option prices, calibrated default thresholds and default probabilities in
closed form, validated against exact-simulation oracles.
"""

from .em import (
    EmTrace,
    SmoothedStats,
    complete_loglik_gradient,
    default_initial_params,
    e_step,
    em_fit,
    expected_complete_loglik,
    m_step,
    smoothed_market_values,
)
from .errors import (
    DataValidationError,
    DegenerateDesignError,
    IllConditionedInnovationError,
    InfeasibleLinearizationError,
    NoSolutionError,
    PrivCreditError,
)
from .kalman import (
    FilterOutput,
    ForecastOutput,
    SmootherOutput,
    StateSpaceSystem,
    correct_step,
    forecast,
    init_filter,
    predict_step,
    run_filter,
    smooth,
    state_space_system,
)
from .model import (
    LinearizationSchedule,
    ModelParams,
    ObservedSeries,
    asset_center,
    asset_linearization,
    asset_weight_vector,
    attach_asset_constants,
    build_linearization_schedule,
    derive_series,
    linearized_log_asset,
    mean_log_multiplier,
    real_intercepts,
    risk_neutral_intercepts,
)
from .oracle import GaussianConditioningOracle
from .pricing import (
    HorizonMoments,
    PricingContext,
    PricingReport,
    RiskNeutralSystem,
    asset_log_moments_private,
    asset_log_moments_public,
    build_pricing_context,
    build_risk_neutral,
    default_probability,
    equity_debt_values,
    horizon_cov_reference,
    horizon_moments,
    price_options,
    solve_threshold,
)
from .simulate import (
    LinearizationErrorReport,
    SimConfig,
    SimulatedPanel,
    binned_error_curve,
    linearization_error_report,
    mc_default_probability,
    mc_option_price,
    mean_log_book_path,
    simulate_panel,
)

__version__ = "0.1.0"
