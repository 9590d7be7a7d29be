"""Exception types shared across the package."""


class InvalidParameters(ValueError):
    """Model parameters violate a hard constraint (e.g. alpha <= d)."""


class InvalidInput(ValueError):
    """An argument is outside the domain of an operation."""


class HorizonExceeded(RuntimeError):
    """A field query needs information beyond the certified time horizon.

    ``required`` carries the smallest horizon known to be sufficient, when
    one can be computed.
    """

    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class AccuracyError(RuntimeError):
    """A numerical integrator failed its own error check."""


class PairingError(ValueError):
    """Two objects that must describe the same environment do not."""
