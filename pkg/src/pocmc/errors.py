"""Exception types shared across the package.

Every guard that can stop a computation has its own class so that callers
(and the CLI exit-code mapping) can react to the specific failure instead of
parsing messages.
"""


class PocmcError(Exception):
    """Base class for all package-specific errors."""


# -- model validation ------------------------------------------------------

class ModelError(PocmcError):
    """Base class for model validation failures."""


class BoundViolation(ModelError):
    """A coefficient entry exceeds the declared bound constant."""


class NegativeRate(ModelError):
    """An off-diagonal transition rate is negative."""


class IntensityTooSmall(ModelError):
    """The thinning intensity does not dominate N times the largest rate."""


class InconsistentHorizon(ModelError):
    """Both or neither of the finite horizon and the discount were given."""


# -- simulation ------------------------------------------------------------

class ControlUndefined(PocmcError):
    """The control path does not cover a time where its value is needed."""


class GridMismatch(PocmcError):
    """Two inputs that must share a time grid do not."""


class NotOpenLoop(PocmcError):
    """A feedback control was passed where a deterministic one is required."""


# -- numerical guards ------------------------------------------------------

class StepTooLarge(PocmcError):
    """Explicit filter step would lose positivity at this step size."""


class NonFiniteState(PocmcError):
    """A state vector left the representable range (direct Euler scheme)."""


class CflViolation(PocmcError):
    """Requested time step breaks the monotonicity bound of the grid scheme.

    Attributes
    ----------
    dt_max : float
        Largest admissible time step for the offending grid/model pair.
    """

    def __init__(self, message, dt_max):
        super().__init__(message)
        self.dt_max = dt_max


class OutOfBoundsStencil(PocmcError):
    """Internal error: a stencil evaluation point left the feasible cone."""


class NoConvergence(PocmcError):
    """Stationary iteration did not reach tolerance.

    Attributes
    ----------
    residuals : list of float
        Sup-norm update history, one entry per recorded iteration.
    """

    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


# -- regression Monte Carlo -------------------------------------------------

class RegressionRankDeficient(PocmcError):
    """The regression basis is unusable at some backward step."""


class BatchTooSmall(PocmcError):
    """Sample batch is too small for the requested regression basis."""


class ConfigError(PocmcError):
    """An experiment configuration failed validation."""
