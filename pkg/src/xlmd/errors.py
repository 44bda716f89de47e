"""Exception types raised across the package."""


class NotPositiveDefinite(ValueError):
    """A coupling matrix failed its Cholesky factorization."""


class DimensionMismatch(ValueError):
    pass


class AsymmetricMatrix(ValueError):
    pass


class StabilityError(ValueError):
    """Time step too large for the fastest latent oscillation."""


class BlowUp(RuntimeError):
    """A trajectory produced a non-finite entry.

    ``state`` is the last finite state and ``step`` the index of the step
    that failed.
    """

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step


class TimeMismatch(ValueError):
    pass


class DegenerateInput(ValueError):
    pass
