"""Exception types shared across the package."""


class KqpdError(Exception):
    """Base class for all package errors."""


class NotHermitian(KqpdError):
    """Matrix fails the Hermitian symmetry check."""


class NumericalFailure(KqpdError):
    """An underlying numerical routine did not converge."""


class DimMismatch(KqpdError):
    """Operands have incompatible dimensions."""


class NotTracePreserving(KqpdError):
    """Kraus operators do not sum to the identity."""


class ScenarioTooLarge(KqpdError):
    """Exact enumeration would exceed the configured pair budget."""


class ToleranceExceeded(KqpdError):
    """A result failed an internal consistency tolerance."""


class OverlapTooSmall(KqpdError):
    """Post-selection overlap is below the configured floor."""


class GridTooCoarse(KqpdError):
    """Grid does not resolve the state (aliasing or boundary leakage)."""


class AliasingDetected(KqpdError):
    """Spectral inversion failed to reconstruct the sampled data."""


class NegativeDensity(KqpdError):
    """Sampling requested from a mixture that is negative somewhere."""


class ZeroProbabilitySlice(KqpdError):
    """Conditioning on an outcome of zero probability."""


class ScenarioError(KqpdError):
    """Scenario file failed validation.

    ``path`` points at the offending entry, e.g. ``system.matrices.h``.
    """

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"at {path}: {message}" if path else message)


class HeisenbergViolationWarning(UserWarning):
    """Detector parameters violate sigma_imp * sigma_ba >= 1/2.

    The measured density may then turn negative; permitted as a diagnostic.
    """
