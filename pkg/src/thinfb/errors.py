"""Exception types shared across the package."""


class ThinFBError(Exception):
    """Base class for package errors."""


class SingularPointError(ThinFBError, ValueError):
    """Evaluation requested at a point where the quantity is undefined."""


class StencilError(ThinFBError, ValueError):
    """A finite-difference stencil leaves the lattice or touches the slit."""


class FlatnessConversionError(ThinFBError, RuntimeError):
    """No shift multiple K up to K_max sandwiches the field between translates."""


class BracketFailureError(ThinFBError, RuntimeError):
    """Root bracketing failed; the point is outside the solvable region."""


class VariationError(ThinFBError, RuntimeError):
    """No domain-variation value could be extracted at the requested point."""


class UnreliableFitError(ThinFBError, RuntimeError):
    """A least-squares fit produced residuals above the acceptance threshold."""


class ConvergenceError(ThinFBError, RuntimeError):
    """An iterative solver stopped before reaching the requested residual."""


class CalibrationError(ThinFBError, RuntimeError):
    """No admissible constants were found inside the calibration search box."""
