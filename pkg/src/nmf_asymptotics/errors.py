"""Exception hierarchy shared by all modules."""


class NMFError(Exception):
    """Base class for every error raised by this package."""


class NonNormalizable(NMFError, ValueError):
    """The requested exponential tilt does not define a probability measure."""


class OutOfSupport(NMFError, ValueError):
    """A mean parameter lies outside the (open) support of the prior."""


class OutOfRange(NMFError, ValueError):
    """A value lies outside the range of the denoising function."""


class NotConvexCertified(NMFError):
    """The mean-field penalty could not be certified strongly convex."""


class NoConvergence(NMFError, RuntimeError):
    """An iterative solver exhausted its budget.

    ``diagnostics`` carries whatever the solver recorded (iterates, residuals).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NonFinite(NMFError, FloatingPointError):
    """A quadrature integrand produced NaN or infinity."""


class NonPositiveB(NMFError, ValueError):
    """A fixed-point update produced b <= 0."""


class VerificationFailed(NMFError, AssertionError):
    def __init__(self, failed, diagnostics=None):
        super().__init__("verification failed: " + ", ".join(failed))
        self.failed = list(failed)
        self.diagnostics = diagnostics or {}


class NotGaussianPrior(NMFError, TypeError):
    """The exact evidence oracle only exists for Gaussian priors."""


class ConfigError(NMFError, ValueError):
    """Malformed or inconsistent run configuration."""
