"""Propensity truncation: the bound b = c / (sqrt(n) ln n) and its application.

Both arm probabilities are floored independently at b, mirroring two separate
max operations; the truncated g1 and g0 therefore need not sum to one. No
renormalization is applied, so the clever covariates downstream see exactly
the floored values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["TruncationSpec", "TruncatedPropensity", "trunc_bound", "apply_truncation"]


def trunc_bound(c: float, n: int) -> float:
    """Truncation bound b = c / (sqrt(n) * ln n).

    Requires n >= 3 (so ln n > 1), c > 0, and a resulting bound below 0.5.
    """
    if n < 3:
        raise ValueError(f"truncation bound requires n >= 3, got n={n}")
    if not c > 0:
        raise ValueError(f"truncation constant must be positive, got c={c}")
    bound = c / (math.sqrt(n) * math.log(n))
    if bound >= 0.5:
        raise ValueError(
            f"truncation bound {bound:.6g} >= 0.5 for c={c}, n={n}; "
            "choose a smaller c or larger n"
        )
    return bound


@dataclass(frozen=True)
class TruncationSpec:
    """A truncation constant c with its induced bound for sample size n."""

    c: float
    n: int
    bound: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "bound", trunc_bound(self.c, self.n))


@dataclass
class TruncatedPropensity:
    """Arm probabilities floored at the bound, with activation counts."""

    g1: np.ndarray
    g0: np.ndarray
    activated_1: int
    activated_0: int
    bound: float


def apply_truncation(
    g1_hat: np.ndarray, spec: TruncationSpec
) -> TruncatedPropensity:
    """Floor both arm probabilities at the bound, elementwise.

    ``g1_hat`` holds estimated P(A=1 | W); the control arm uses 1 - g1_hat.
    Activation counts record how many entries each floor touched.
    """
    g1_hat = np.asarray(g1_hat, dtype=float)
    b = spec.bound
    g1 = np.maximum(g1_hat, b)
    g0_raw = 1.0 - g1_hat
    g0 = np.maximum(g0_raw, b)
    return TruncatedPropensity(
        g1=g1,
        g0=g0,
        activated_1=int(np.sum(g1_hat < b)),
        activated_0=int(np.sum(g0_raw < b)),
        bound=b,
    )
