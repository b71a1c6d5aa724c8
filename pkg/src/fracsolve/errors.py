"""Exception types raised by fracsolve."""


class FracSolveError(Exception):
    """Base class for all fracsolve errors."""


class NotPositiveDefiniteError(FracSolveError):
    """Factorization broke down on a non-positive pivot."""

    def __init__(self, index, pivot):
        self.index = int(index)
        self.pivot = float(pivot)
        super().__init__(
            f"matrix is not positive definite: pivot {self.pivot:.3e} at row {self.index}"
        )


class ConvergenceError(FracSolveError):
    """An iteration hit its cap; carries the best estimate seen so far."""

    def __init__(self, message, best=None, residual=None):
        self.best = best
        self.residual = residual
        super().__init__(message)


class QuadratureOverflowError(FracSolveError):
    """A sinc node would require exp(y) beyond the floating point range."""

    def __init__(self, node, limit):
        self.node = float(node)
        self.limit = float(limit)
        super().__init__(
            f"sinc node y={self.node:.6g} exceeds overflow bound {self.limit:g} "
            "for the shifted operator S + exp(y) M"
        )


class ModelFormatError(FracSolveError):
    """A persisted reduced basis model could not be read."""


class CertificateViolation(FracSolveError):
    """A computed error certificate failed to bound the observed error."""
