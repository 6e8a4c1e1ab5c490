"""Exception hierarchy shared across the package.

Three broad families, mirroring the CLI exit codes: validation problems
(bad dimensions, bad files, inadmissible parameters) exit with 2, numerical
failures (singular or diverged computations) with 3, and I/O problems with 4.
"""


class TfrisError(Exception):
    """Base class for all package errors."""


class ValidationError(TfrisError, ValueError):
    """Invalid input values, shapes, or configuration."""


class GridMismatchError(ValidationError):
    """A harmonic index or grid does not match the grid it is used with."""


class DimensionMismatchError(ValidationError):
    """Array shapes are inconsistent with the declared port/harmonic counts."""


class InadmissibleGaugeError(ValidationError):
    """A gauge parameter violates its admissibility constraints."""


class VariantMismatchError(ValidationError):
    """A gauge was applied to proxy parameters of the wrong coupling variant."""


class SchemaError(ValidationError):
    """A serialized file violates its schema.

    ``pointer`` is a JSON-pointer-like path to the offending node.
    """

    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer}: {message}" if pointer else message)
        self.pointer = pointer


class NumericalError(TfrisError, ArithmeticError):
    """A numerical computation failed (singularity, divergence)."""


class IllConditionedError(NumericalError):
    """The resolvent system is numerically singular.

    Carries the estimated condition number that triggered the failure.
    """

    def __init__(self, cond_estimate):
        super().__init__(
            f"resolvent condition estimate {cond_estimate:.3g} exceeds 1e12"
        )
        self.cond_estimate = cond_estimate
