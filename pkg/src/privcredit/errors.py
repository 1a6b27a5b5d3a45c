"""Exception hierarchy for the privcredit engine."""


class PrivCreditError(Exception):
    """Base class for all engine errors."""


class DataValidationError(PrivCreditError):
    """Malformed or out-of-domain input data (names the offending cell)."""


class InfeasibleLinearizationError(PrivCreditError):
    """Expected payout exceeds expected value at some period.

    Raised when exp(payout gap) >= 1 in any component, which makes the
    log-linearization undefined. Carries the period and component.
    """

    def __init__(self, period, component, value):
        self.period = period
        self.component = component
        self.value = value
        name = ("equity", "liability")[component]
        super().__init__(
            f"infeasible linearization at period {period}, {name} component: "
            f"exp(payout gap) = {value:.6g} >= 1"
        )


class IllConditionedInnovationError(PrivCreditError):
    """Innovation covariance numerically singular in the Kalman filter."""


class DegenerateDesignError(PrivCreditError):
    """Normal equations of the M-step are numerically singular."""


class NoSolutionError(PrivCreditError):
    """Root finding target outside the attainable range."""
