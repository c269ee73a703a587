"""Exception and warning hierarchy.

Every error maps to a CLI exit code: validation problems (bad input, bad
configuration) exit with 2, numerical failures exit with 3.
"""

from __future__ import annotations


class RayleighError(Exception):
    exit_code = 1


class ValidationError(RayleighError, ValueError):
    exit_code = 2


class NumericalError(RayleighError, ArithmeticError):
    exit_code = 3


# psf / basis
class OrderTooHigh(ValidationError):
    pass


class NotDifferentiable(NumericalError):
    pass


class GridMismatch(ValidationError):
    pass


class PsfAssumptionViolated(ValidationError):
    """The PSF derivatives are not pairwise orthogonal (odd/even split fails)."""


class LinearDependence(NumericalError):
    def __init__(self, order: int, residual: float):
        super().__init__(f"derivative of order {order} is numerically dependent "
                         f"on lower orders (relative residual {residual:.3e})")
        self.order = order
        self.residual = residual


# scene
class EmptyScene(ValidationError):
    pass


class DegenerateCovariance(NumericalError):
    pass


class ZeroSizeShape(ValidationError):
    pass


# povm
class AsymmetricGrid(ValidationError):
    pass


class PixelTooSmall(ValidationError):
    pass


class UnsupportedBase(ValidationError):
    pass


# prob
class CentroidFrameMismatch(ValidationError):
    pass


class OutsideConvergenceRadius(ValidationError):
    pass


class TruncationFailure(NumericalError):
    pass


class UnsupportedPattern(ValidationError):
    pass


# fisher
class SingularProbability(NumericalError):
    def __init__(self, outcome: str):
        super().__init__(f"outcome {outcome!r} has zero probability but a nonzero derivative")
        self.outcome = outcome


class ZeroEvenMoment(NumericalError):
    pass


class InvalidBeta(ValidationError):
    pass


class AnisotropicPsf(ValidationError):
    pass


class SingularFIM(NumericalError):
    pass


class DegenerateScene(ValidationError):
    pass


# sim
class InvalidDistribution(ValidationError):
    pass


class NonIdentifiable(ValidationError):
    pass


class NegativeRadicand(NumericalError):
    def __init__(self, k: int, magnitude: float):
        super().__init__(f"radicand of M_{k} estimated negative; |M_{k}| ~ {magnitude:.6g}")
        self.k = k
        self.magnitude = magnitude


# harness
class InsufficientGrid(ValidationError):
    pass


class IoError(ValidationError, OSError):
    pass


# warnings
class SubspaceTruncationWarning(RuntimeWarning):
    pass


class LowCountsWarning(RuntimeWarning):
    pass


class WeakRegimeWarning(RuntimeWarning):
    pass
