"""Exception types shared across the package."""

from __future__ import annotations


class RealizabilityError(Exception):
    """Base class for failed preconditions and numerical breakdowns."""

    kind = "error"

    def to_dict(self) -> dict:
        return {"error": self.kind, "message": str(self)}


class HittingError(RealizabilityError):
    """A flow trajectory failed to reach its target set.

    ``kind`` is one of ``"horizon"``, ``"stagnation"``, ``"no-crossing"``,
    ``"multivalued"`` or ``"tangential"``.
    """

    def __init__(self, kind: str, message: str, trajectory=None, points=None):
        super().__init__(message)
        self.kind = kind
        self.trajectory = trajectory
        self.points = points


class RefinementRequired(RealizabilityError):
    kind = "refinement"


class QuadratureError(RealizabilityError):
    kind = "quadrature"

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


class OrientationError(RealizabilityError):
    kind = "orientation"


class DeterminantSignError(RealizabilityError):
    """det(<DU> DU) (or det P for laminate leaves) is not positive."""

    kind = "sign"


class NotRankOneError(RealizabilityError):
    kind = "not rank-one"


class RankDeficiencyError(RealizabilityError):
    kind = "rank"


class LaminateSpecError(RealizabilityError):
    kind = "spec"


class DegenerateLoadingError(RealizabilityError):
    kind = "degenerate loading"
