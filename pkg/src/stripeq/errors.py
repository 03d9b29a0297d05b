"""Exception hierarchy shared by all stripeq modules."""


class StripeqError(Exception):
    """Base class for every error raised by this package."""


class InvalidMeshError(StripeqError, ValueError):
    pass


class InvalidStripError(StripeqError, ValueError):
    pass


class SpecViolationError(StripeqError, ValueError):
    """A problem coefficient left its declared bounds."""


class ModeError(StripeqError, ValueError):
    """Concentrated-only operation called on a limit problem, or vice versa."""


class EvaluationError(StripeqError, ArithmeticError):
    """A nonlinearity returned a non-finite value."""


class DomainError(StripeqError, ValueError):
    pass


class ConvergenceError(StripeqError, RuntimeError):
    """An iterative method stopped before reaching its tolerance.

    ``estimate`` carries the best value available when the iteration gave up.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class SingularOperatorError(StripeqError, ArithmeticError):
    pass


class HyperbolicityError(SingularOperatorError):
    """The frozen linearization used by the chord iteration is singular."""


class DivergenceError(StripeqError, RuntimeError):
    """An iterate left the trust ball around its anchor."""

    def __init__(self, message, iterate=None):
        super().__init__(message)
        self.iterate = iterate
