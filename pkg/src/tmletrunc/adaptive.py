"""Adaptive truncation-level selection: Lepski walk with a safe brake.

Given fits along an ascending grid of truncation constants, the selector
starts at the most-truncated level (largest c) and walks toward weaker
truncation (smaller c). A step from the current level to the next is taken
only if both gates pass, checked in this order:

1. Brake: the next level's estimate must lie in the envelope centered at the
   most-truncated estimate with radius z_n * SE(c_max), z_n = multiplier *
   sqrt(ln n). This keeps the walk out of regions where weak truncation has
   destabilized the estimator, and guarantees every selected estimate (being
   either the anchor or a level the brake admitted) lies in the envelope.
2. Lepski comparison: the move is allowed only when the estimate shifts and
   the next interval's boundary moves in the same direction — a downward
   shift must not raise the interval's upper end, an upward shift must not
   lower its lower end. Ties stop the walk.

The variance source (EIF, Monte Carlo across replications, or targeted
bootstrap) parameterizes both the walk's intervals and the envelope radius;
the corresponding selectors are conventionally tagged EIFb, MCb, and TBb.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .variance import ConfidenceInterval

__all__ = [
    "Selector",
    "StopReason",
    "TruncationPath",
    "BrakeEnvelope",
    "SelectionResult",
    "lepski_move_allowed",
    "build_envelope",
    "select_truncation",
]

DEFAULT_BRAKE_MULTIPLIER = 1.0


class Selector(str, enum.Enum):
    """Variance source driving the walk's intervals and the brake radius."""

    EIFB = "eifb"
    MCB = "mcb"
    TBB = "tbb"


class StopReason(str, enum.Enum):
    BRAKE_STOP = "brake_stop"
    LEPSKI_STOP = "lepski_stop"
    GRID_EXHAUSTED = "grid_exhausted"


@dataclass(frozen=True)
class TruncationPath:
    """Per-level estimates along an ascending truncation grid.

    ``cs`` must be strictly ascending; ``psis``, ``variances`` and ``cis``
    hold the point estimate, variance, and 95% interval at each level, all
    under one variance source.
    """

    cs: tuple[float, ...]
    psis: tuple[float, ...]
    variances: tuple[float, ...]
    cis: tuple[ConfidenceInterval, ...]

    def __post_init__(self) -> None:
        k = len(self.cs)
        if k == 0:
            raise ValueError("truncation path must have at least one level")
        if not all(a < b for a, b in zip(self.cs, self.cs[1:])):
            raise ValueError(f"truncation grid must be strictly ascending, got {self.cs}")
        if not (len(self.psis) == len(self.variances) == len(self.cis) == k):
            raise ValueError("path fields must have one entry per grid level")


@dataclass(frozen=True)
class BrakeEnvelope:
    """Admissible region centered at the most-truncated estimate."""

    center: float
    radius: float
    z_multiplier: float

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ValueError(f"envelope radius must be nonnegative, got {self.radius}")

    def contains(self, theta: float) -> bool:
        return abs(theta - self.center) <= self.radius


@dataclass(frozen=True)
class SelectionResult:
    chosen_c: float
    chosen_psi: float
    chosen_ci: ConfidenceInterval
    stop_reason: StopReason
    variance_source: Selector | None
    chosen_index: int


def lepski_move_allowed(
    psi_cur: float,
    ci_cur: ConfidenceInterval,
    psi_next: float,
    ci_next: ConfidenceInterval,
) -> bool:
    """Whether the walk may advance from the current level to the next.

    True iff (psi_next < psi_cur and sup I_next <= sup I_cur) or
    (psi_next > psi_cur and inf I_next >= inf I_cur). Equal estimates allow
    neither strict inequality, so ties return False.
    """
    if psi_next < psi_cur:
        return ci_next.upper <= ci_cur.upper
    if psi_next > psi_cur:
        return ci_next.lower >= ci_cur.lower
    return False


def build_envelope(
    path: TruncationPath, n: int, multiplier: float = DEFAULT_BRAKE_MULTIPLIER
) -> BrakeEnvelope:
    """Envelope at the anchor: center psi_hat(c_max), radius z_n * SE(c_max).

    z_n = multiplier * sqrt(ln n); SE(c_max) = sqrt of the path's variance at
    its last (most-truncated) level.
    """
    if n < 2:
        raise ValueError(f"envelope requires n >= 2, got {n}")
    se_max = math.sqrt(path.variances[-1])
    return BrakeEnvelope(
        center=path.psis[-1],
        radius=multiplier * math.sqrt(math.log(n)) * se_max,
        z_multiplier=multiplier,
    )


def select_truncation(
    path: TruncationPath,
    envelope: BrakeEnvelope,
    variance_source: Selector | None = None,
) -> SelectionResult:
    """Walk the grid from c_max toward c_1, brake first, then Lepski.

    Stops with ``BRAKE_STOP`` when the candidate estimate leaves the envelope,
    ``LEPSKI_STOP`` when the interval comparison blocks the move, and
    ``GRID_EXHAUSTED`` when the walk reaches c_1.
    """
    k = len(path.cs) - 1  # start at the most-truncated level
    stop_reason = StopReason.GRID_EXHAUSTED
    while k > 0:
        candidate = k - 1
        if not envelope.contains(path.psis[candidate]):
            stop_reason = StopReason.BRAKE_STOP
            break
        if not lepski_move_allowed(
            path.psis[k], path.cis[k], path.psis[candidate], path.cis[candidate]
        ):
            stop_reason = StopReason.LEPSKI_STOP
            break
        k = candidate
    return SelectionResult(
        chosen_c=path.cs[k],
        chosen_psi=path.psis[k],
        chosen_ci=path.cis[k],
        stop_reason=stop_reason,
        variance_source=variance_source,
        chosen_index=k,
    )
