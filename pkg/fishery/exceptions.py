"""
Fishery Exceptions

Every failure the solver and simulation pipelines raise derives from FisheryError,
so callers (the management command in particular) can catch one type.
"""

from typing import List, Optional


class FisheryError(ValueError):
    """Base class for all domain errors"""


class NoInteriorGoldenRule(FisheryError):
    pass


class AssumptionOneViolated(FisheryError):
    """Unrestrained harvesting would not exhaust the stock: max b >= sum of least maximizers"""

    def __init__(self, max_growth: float, total_demand: float):
        self.max_growth = max_growth
        self.total_demand = total_demand
        super().__init__(
            f"Unrestrained harvest cannot exhaust the stock: max b(x) = {max_growth:.17g} is not below "
            f"sum of least maximizers = {total_demand:.17g}"
        )


class RevenueNegative(FisheryError):
    pass


class RevenueNonzeroAtOrigin(FisheryError):
    pass


class DiscountTooLarge(FisheryError):
    pass


class EmptyAgentList(FisheryError):
    pass


class PointOutsideDomain(FisheryError):
    pass


class BranchRootNotBracketed(FisheryError):
    pass


class NonConcaveValueDetected(FisheryError):
    pass


class NotLinearIdenticalCommunity(FisheryError):
    pass


class KinkAtCriticalIntensity(FisheryError):
    """The concave hull has a kink at b(x_hat); the critical tax is an interval"""

    def __init__(self, lower: float, upper: float):
        self.lower = lower
        self.upper = upper
        super().__init__(
            f"Concave hull has a kink at the critical intensity: "
            f"superdifferential [{lower:.17g}, {upper:.17g}]"
        )


class DegenerateChatter(FisheryError):
    """Pulse fishing is unnecessary: F equals its hull at b(x_hat)"""

    def __init__(self, message: str, static_strategy=None):
        self.static_strategy = static_strategy
        super().__init__(message)


class EpsilonTooLarge(FisheryError):
    pass


class HorizonTooShort(FisheryError):
    pass


class CommunityNotNested(FisheryError):
    pass


class CriticalTaxDecreased(FisheryError):
    pass


class ConfigParseError(FisheryError):
    """A required field is missing or malformed"""

    def __init__(self, field_path: str, message: Optional[str] = None):
        self.field_path = field_path
        super().__init__(message or f"Missing or malformed field: {field_path}")


class ConfigValidationError(FisheryError):
    """The config parsed but violates one or more model invariants"""

    def __init__(self, diagnostics: List[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
