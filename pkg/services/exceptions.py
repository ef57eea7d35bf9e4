"""
Error taxonomy for the pxpscars pipeline.

Two families exist. Validation failures (bad input, missing prerequisites) derive from
ValueError and map to CLI exit status 2; numerical failures (singular cells, solver
breakdowns) derive from ArithmeticError and map to exit status 3.
"""

from typing import Dict, List, Optional


class PXPScarsError(Exception):
    """Root of every error raised by the pipeline."""

    exit_code = 1

    def details(self) -> Dict:
        """
        Machine-readable description of the error.

        Returns:
            Dict: 'error' (class name) and 'message', plus any subclass extras
        """
        return {'error': type(self).__name__, 'message': str(self)}


class ValidationFailure(PXPScarsError, ValueError):
    """Input rejected before any computation ran."""

    exit_code = 2


class DomainError(ValidationFailure):
    pass


class DimensionMismatch(ValidationFailure):
    pass


class TooLarge(ValidationFailure):
    pass


class IncommensurateStep(ValidationFailure):
    pass


class SingularPoint(ValidationFailure):
    """Point on the boundary of the Wigner chart where the transform is undefined."""


class MissingInput(ValidationFailure):
    """One or more prerequisite artifacts are absent."""

    def __init__(self, missing: List[str]) -> None:
        self.missing = list(missing)
        super().__init__(f"Missing required inputs: {self.missing}")

    def details(self) -> Dict:
        info = super().details()
        info['missing'] = self.missing
        return info


class NumericalFailure(PXPScarsError, ArithmeticError):
    """A numerical routine could not produce a trustworthy result."""

    exit_code = 3


class SingularCell(NumericalFailure):
    """The unit cell sits on the coordinate singularity of the variational manifold."""


class NoReturnFound(NumericalFailure):
    pass


class EigFailure(NumericalFailure):
    pass


class EnvelopeTooSmall(NumericalFailure):
    pass


class SVDFailure(NumericalFailure):
    pass


class InsufficientPeaks(NumericalFailure):
    pass


class ConvergenceFailure(NumericalFailure):
    """Krylov propagation could not meet its local error tolerance."""

    def __init__(self, message: str, step: Optional[float] = None, residual: Optional[float] = None) -> None:
        self.step = step
        self.residual = residual
        super().__init__(message)

    def details(self) -> Dict:
        info = super().details()
        info['step'] = self.step
        info['residual'] = self.residual
        return info
