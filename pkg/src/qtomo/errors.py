"""Exception types shared across the toolkit."""


class ShapeError(ValueError):
    """Operands have incompatible or disallowed shapes."""


class CapacityError(ValueError):
    """Requested size exceeds a configured hard limit."""


class ConvergenceError(RuntimeError):
    """An iterative numerical routine failed to converge within its cap."""


class NotPsdError(ValueError):
    """Matrix expected to be positive semidefinite has a clearly negative eigenvalue."""


class DegenerateFactorError(ValueError):
    """A Cholesky-style factor is numerically zero and cannot define a state."""


class TrainingDiverged(RuntimeError):
    """Training produced non-finite values; carries the last finite parameter snapshot."""

    def __init__(self, message, last_good=None, diagnostics=None):
        super().__init__(message)
        self.last_good = last_good
        self.diagnostics = diagnostics or {}
