"""Exception hierarchy shared by the library, the service and the CLI.

Every error carries a ``kind`` used by the HTTP layer and an ``exit_code``
used by the command line client:

    parse      -> exit 2   (malformed input files / payloads)
    validation -> exit 1   (well-formed but geometrically invalid data)
    numerical  -> exit 3   (a computation failed to meet its tolerance)
"""


class EngineError(Exception):
    kind = "validation"
    exit_code = 1


class ParseError(EngineError):
    kind = "parse"
    exit_code = 2


class ValidationError(EngineError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class DegreeError(ValidationError):
    pass


class MetricError(ValidationError):
    pass


class StabilityError(ValidationError):
    """The 3-form is not stable of negative type (lambda >= 0)."""


class CompatibilityError(ValidationError):
    pass


class DegenerateOmegaError(ValidationError):
    pass


class NormalizationError(ValidationError):
    """Pair fails psi+ ^ psi- = (2/3) omega^3.

    ``rescale`` is the s > 0 making (omega, s*psi+) normalized, when one
    exists (None otherwise).
    """

    def __init__(self, message, rescale=None):
        super().__init__(message)
        self.rescale = rescale


class LefschetzError(ValidationError):
    """beta -> beta ^ omega is singular: omega is (numerically) degenerate."""


class NumericalError(EngineError):
    kind = "numerical"
    exit_code = 3


class ReconstructionError(NumericalError):
    """A torsion decomposition failed to reproduce its input derivatives."""


class IntegrationError(NumericalError):
    pass
