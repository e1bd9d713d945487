"""
Exception hierarchy shared by the simulator packages.

Everything derives from ``ValueError`` (or ``ArithmeticError`` for the ratio
case) so callers that only catch ``ValueError`` keep working.
"""

from typing import Optional


class NotHermitianError(ValueError):
    def __init__(self, max_asymmetry: float):
        self.max_asymmetry = max_asymmetry
        super().__init__(f"Matrix is not Hermitian: max relative asymmetry {max_asymmetry:.3e}")


class NotPsdError(ValueError):
    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"Matrix is not positive semi-definite: relative min eigenvalue {min_eigenvalue:.3e}")


class RankDeficientError(ValueError):
    def __init__(self, singular_value_ratio: float):
        self.singular_value_ratio = singular_value_ratio
        super().__init__(
            f"Matrix is rank deficient: smallest/largest singular value ratio {singular_value_ratio:.3e}"
        )


class UndefinedRatioError(ArithmeticError):
    pass


class InfeasiblePrecoderError(ValueError):
    """
    Raised when a precoder cannot satisfy its constraints for the given
    dimensions or statistics. ``hint`` carries the remediation shown by the CLI.
    """

    default_hint = "raise M or lower D_n"

    def __init__(self, message: str, hint: Optional[str] = None):
        self.hint = hint or self.default_hint
        super().__init__(f"{message} (hint: {self.hint})")


class NullSpaceExhaustedError(InfeasiblePrecoderError):
    default_hint = "no null space left; apply a low-rank approximation of the type-S covariances or raise M"


class InfeasibleDimensionError(InfeasiblePrecoderError):
    pass


class DegenerateUserError(InfeasiblePrecoderError):
    default_hint = "type-C channel lies inside the type-S subspace; reschedule the user or lower D_n"


class UnreachableUserError(InfeasiblePrecoderError):
    default_hint = "type-S user has no energy left in the remaining subspace; reschedule the user or raise M"


class ScenarioError(ValueError):
    """
    Parse or validation failure of a scenario / sweep file. ``line`` is 1-based.
    """

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.message = message
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")
