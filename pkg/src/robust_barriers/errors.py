"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class RobustBarrierError(Exception):
    """Base class; the CLI maps every subclass to exit status 1."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class ArbitrageViolation(RobustBarrierError):
    code = "arbitrage_violation"


class DomainError(RobustBarrierError):
    code = "domain_error"


class ZeroMass(RobustBarrierError):
    code = "zero_mass"


class NoRoot(RobustBarrierError):
    code = "no_root"


class StrikeOrdering(RobustBarrierError):
    code = "strike_ordering"


class SingularSystem(RobustBarrierError):
    code = "singular_system"


class ThresholdSide(RobustBarrierError):
    code = "threshold_side"


class InequalityViolated(RobustBarrierError):
    code = "inequality_violated"

    def __init__(self, message: str, witness=None, slack: float | None = None):
        super().__init__(message)
        self.witness = witness
        self.slack = slack


class ClassificationAmbiguous(RobustBarrierError):
    code = "classification_ambiguous"


class StageMassNegative(RobustBarrierError):
    code = "stage_mass_negative"


class ZStarNotFound(RobustBarrierError):
    code = "zstar_not_found"


class CenterMismatch(RobustBarrierError):
    code = "center_mismatch"


class HorizonExceeded(RobustBarrierError):
    code = "horizon_exceeded"


class InsufficientQuotes(RobustBarrierError):
    code = "insufficient_quotes"


class DominanceFailed(RobustBarrierError):
    code = "dominance_failed"


class QuadratureFailure(RobustBarrierError):
    code = "quadrature_failure"


class GridUnstable(RobustBarrierError):
    code = "grid_unstable"
