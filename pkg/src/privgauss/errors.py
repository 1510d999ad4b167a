"""Exception hierarchy shared by all estimator components."""


class PrivGaussError(Exception):
    """Base class for all errors raised by this package."""


class InvalidMatrix(PrivGaussError):
    """Input matrix is not symmetric/finite or otherwise unusable."""


class InvalidArgument(PrivGaussError):
    """A scalar or structural argument is out of its documented range."""


class DegenerateSpectrum(PrivGaussError):
    """An eigenvalue that must be positive is zero or negative."""


class RangeMismatch(PrivGaussError):
    """An estimate has significant mass outside the truth's column space."""


class UnsupportedComposition(PrivGaussError):
    """Advanced composition was requested for a ledger it cannot handle."""


class InsufficientSamples(PrivGaussError):
    """The dataset is too small for the requested operation."""


class BottomReleased(PrivGaussError):
    """A DP histogram released no bucket (the mechanism's bottom symbol)."""


class ConvergenceFailure(PrivGaussError):
    """An iterative numerical routine hit its hard iteration cap."""


class ConfigError(PrivGaussError):
    """An experiment configuration file is malformed or inconsistent."""
