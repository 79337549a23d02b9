"""Exception types and integration guards shared across the package."""

# Any integrator aborts with BlowUpError once a state value passes this.
BLOWUP_THRESHOLD = 1e6


class LdoKitError(Exception):
    """Base class for all ldokit errors."""


class ConfigError(LdoKitError):
    """Invalid run configuration; message carries the offending field path."""


class SnapshotFormatError(LdoKitError):
    """Malformed snapshot file; message names the offending field."""


class NonFiniteStateError(LdoKitError):
    """A state field contains NaN or Inf where finite values are required."""


class BlowUpError(LdoKitError):
    """Forward integration diverged (value above threshold or non-finite)."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"solution blew up at step {step}")


class DeimSelectionError(LdoKitError):
    """Greedy interpolation-point selection hit a singular system."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(
            message or f"singular interpolation system at selection step {step}"
        )


class DegenerateDirectionsError(LdoKitError):
    """Constrained fit directions are rank deficient; carries their labels."""

    def __init__(self, labels, message: str | None = None):
        self.labels = list(labels)
        super().__init__(
            message or f"degenerate perturbation directions: {', '.join(self.labels)}"
        )
