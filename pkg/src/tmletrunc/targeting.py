"""TMLE targeting: fluctuation fits, counterfactual predictions, ATE, EIF.

Two strategies are supported, each under a logistic or linear link:

* ``gH`` (clever-covariate-scaled): the loss is unweighted and the arm-specific
  clever covariates H1 = A/g1, H0 = (1-A)/g0 carry the inverse-probability
  factors. Because H1*H0 = 0 pointwise, the two-parameter fit decomposes into
  two one-dimensional problems. The counterfactual prediction injects 1/g_a
  into the update, allowing large local corrections where weights are extreme.
* ``gWt`` (loss-weighted): the inverse-probability factors act as observation
  weights in the loss and the fluctuation is intercept-only per arm; the
  weight does not enter the counterfactual prediction.

Logistic-link fits run on the outcome scaled to [0, 1]; linear-link fits have
closed forms on the original scale. In every case the fitted fluctuation
solves the arm-wise score equation, which makes the per-observation efficient
influence function average to zero at the plug-in estimate.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

from .datagen import Dataset
from .nuisance import NuisanceFits, OutcomeScaling
from .truncation import TruncatedPropensity, TruncationSpec, apply_truncation

__all__ = [
    "Strategy",
    "Link",
    "FluctuationResult",
    "TmleFit",
    "fluctuate_gh_logit",
    "fluctuate_gwt_logit",
    "fluctuate_gh_linear",
    "fluctuate_gwt_linear",
    "predict_counterfactual",
    "tmle_fit",
    "initial_psi",
]

#: Absolute tolerance on the one-dimensional fluctuation score.
SCORE_TOL = 1e-11

#: Bracket half-width for the fluctuation parameter search.
EPS_BRACKET = 60.0

_MAX_NEWTON_ITER = 100


class Strategy(str, enum.Enum):
    GH = "gh"
    GWT = "gwt"


class Link(str, enum.Enum):
    LOGIT = "logit"
    LINEAR = "linear"


@dataclass
class FluctuationResult:
    """Fitted fluctuation parameters for the two arms."""

    eps1: float
    eps0: float
    link: Link
    strategy: Strategy
    converged: bool


@dataclass
class TmleFit:
    """Targeted predictions, plug-in estimate, and influence function."""

    q1_star: np.ndarray
    q0_star: np.ndarray
    psi_hat: float
    eif: np.ndarray
    fluct: FluctuationResult
    trunc: TruncatedPropensity
    spec: TruncationSpec


def _solve_score_1d(
    x: np.ndarray,
    w: np.ndarray,
    offset: np.ndarray,
    y: np.ndarray,
    *,
    score_tol: float = SCORE_TOL,
    max_iter: int = _MAX_NEWTON_ITER,
) -> tuple[float, bool]:
    """Root of score(e) = sum_i w_i x_i (y_i - expit(offset_i + e x_i)).

    The score is strictly decreasing in e (w, x > 0 here), so the root is
    unique when it exists. Newton from 0 with a maintained bracket and
    bisection fallback; returns (epsilon, converged).
    """

    def score(e: float) -> float:
        return float(np.sum(w * x * (y - expit(offset + e * x))))

    lo, hi = -EPS_BRACKET, EPS_BRACKET
    s_lo, s_hi = score(lo), score(hi)
    # Decreasing score: need score(lo) >= 0 >= score(hi) for a bracketed root.
    if s_lo < 0.0:
        return (lo, abs(s_lo) < score_tol)
    if s_hi > 0.0:
        return (hi, abs(s_hi) < score_tol)
    eps = 0.0
    for _ in range(max_iter):
        p = expit(offset + eps * x)
        s = float(np.sum(w * x * (y - p)))
        if abs(s) < score_tol:
            return eps, True
        if s > 0.0:
            lo = eps
        else:
            hi = eps
        deriv = float(np.sum(w * x * x * p * (1.0 - p)))
        if deriv > 0.0:
            candidate = eps + s / deriv
        else:
            candidate = np.nan
        if not np.isfinite(candidate) or not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        if candidate == eps:
            # Bracket has collapsed to float resolution.
            return eps, abs(s) < max(score_tol, 1e-6)
        eps = candidate
    return eps, abs(score(eps)) < score_tol


def _require_both_arms(a: np.ndarray) -> None:
    if a.all() or not a.any():
        raise ValueError("fluctuation requires observations in both arms")


def fluctuate_gh_logit(
    q1_scaled: np.ndarray,
    q0_scaled: np.ndarray,
    y_scaled: np.ndarray,
    a: np.ndarray,
    g: TruncatedPropensity,
) -> FluctuationResult:
    """Unweighted Bernoulli fit with clever covariates H1 = A/g1, H0 = (1-A)/g0.

    H1 and H0 are never jointly nonzero, so (eps1, eps0) split into two
    one-dimensional fits, each solving its arm's score equation
    sum_i H_a,i (y_i - p_i) = 0 on the scaled outcome.
    """
    _require_both_arms(a)
    treated = a == 1
    eps1, ok1 = _solve_score_1d(
        x=1.0 / g.g1[treated],
        w=np.ones(int(treated.sum())),
        offset=logit(q1_scaled[treated]),
        y=y_scaled[treated],
    )
    control = ~treated
    eps0, ok0 = _solve_score_1d(
        x=1.0 / g.g0[control],
        w=np.ones(int(control.sum())),
        offset=logit(q0_scaled[control]),
        y=y_scaled[control],
    )
    return FluctuationResult(eps1, eps0, Link.LOGIT, Strategy.GH, ok1 and ok0)


def fluctuate_gwt_logit(
    q1_scaled: np.ndarray,
    q0_scaled: np.ndarray,
    y_scaled: np.ndarray,
    a: np.ndarray,
    g: TruncatedPropensity,
) -> FluctuationResult:
    """Weighted Bernoulli fit: weights A/g1 and (1-A)/g0, intercept-only.

    Solves the weighted score equations
    sum_i (A_i/g1_i)(y_i - p1_i) = 0 and sum_i ((1-A_i)/g0_i)(y_i - p0_i) = 0.
    """
    _require_both_arms(a)
    treated = a == 1
    eps1, ok1 = _solve_score_1d(
        x=np.ones(int(treated.sum())),
        w=1.0 / g.g1[treated],
        offset=logit(q1_scaled[treated]),
        y=y_scaled[treated],
    )
    control = ~treated
    eps0, ok0 = _solve_score_1d(
        x=np.ones(int(control.sum())),
        w=1.0 / g.g0[control],
        offset=logit(q0_scaled[control]),
        y=y_scaled[control],
    )
    return FluctuationResult(eps1, eps0, Link.LOGIT, Strategy.GWT, ok1 and ok0)


def fluctuate_gh_linear(
    q1: np.ndarray,
    q0: np.ndarray,
    y: np.ndarray,
    a: np.ndarray,
    g: TruncatedPropensity,
) -> FluctuationResult:
    """Closed-form linear-link update: eps_a = sum H_a (Y - Q) / sum H_a^2."""
    _require_both_arms(a)
    treated = a == 1
    h1 = 1.0 / g.g1[treated]
    eps1 = float(np.sum(h1 * (y[treated] - q1[treated])) / np.sum(h1 * h1))
    control = ~treated
    h0 = 1.0 / g.g0[control]
    eps0 = float(np.sum(h0 * (y[control] - q0[control])) / np.sum(h0 * h0))
    return FluctuationResult(eps1, eps0, Link.LINEAR, Strategy.GH, True)


def fluctuate_gwt_linear(
    q1: np.ndarray,
    q0: np.ndarray,
    y: np.ndarray,
    a: np.ndarray,
    g: TruncatedPropensity,
) -> FluctuationResult:
    """Closed-form weighted-mean update: eps_a = weighted mean residual."""
    _require_both_arms(a)
    treated = a == 1
    w1 = 1.0 / g.g1[treated]
    eps1 = float(np.sum(w1 * (y[treated] - q1[treated])) / np.sum(w1))
    control = ~treated
    w0 = 1.0 / g.g0[control]
    eps0 = float(np.sum(w0 * (y[control] - q0[control])) / np.sum(w0))
    return FluctuationResult(eps1, eps0, Link.LINEAR, Strategy.GWT, True)


def predict_counterfactual(
    fluct: FluctuationResult,
    q_at_arm: np.ndarray,
    g: TruncatedPropensity,
    arm: int,
    scaling: OutcomeScaling | None,
) -> np.ndarray:
    """Targeted prediction for every observation at the given arm.

    gH injects the inverse probability into the update (eps_a / g_a under the
    logistic link, eps_a * (1/g_a) under the linear link); gWt applies the
    flat shift eps_a. Logistic-link results are mapped back to the original
    outcome scale via ``scaling``.
    """
    if arm not in (0, 1):
        raise ValueError(f"arm must be 0 or 1, got {arm}")
    eps = fluct.eps1 if arm == 1 else fluct.eps0
    g_arm = g.g1 if arm == 1 else g.g0
    if fluct.link is Link.LOGIT:
        if scaling is None:
            raise ValueError("logistic-link prediction requires the outcome scaling")
        z = logit(scaling.scale_clamp(q_at_arm))
        if fluct.strategy is Strategy.GH:
            z = z + eps / g_arm
        else:
            z = z + eps
        return scaling.unscale(expit(z))
    if fluct.strategy is Strategy.GH:
        return q_at_arm + eps / g_arm
    return q_at_arm + eps


_FLUCTUATE = {
    (Strategy.GH, Link.LOGIT): fluctuate_gh_logit,
    (Strategy.GWT, Link.LOGIT): fluctuate_gwt_logit,
    (Strategy.GH, Link.LINEAR): fluctuate_gh_linear,
    (Strategy.GWT, Link.LINEAR): fluctuate_gwt_linear,
}


def tmle_fit(
    ds: Dataset,
    nuis: NuisanceFits,
    spec: TruncationSpec,
    strategy: Strategy | str,
    link: Link | str,
    *,
    eif_propensity: str = "truncated",
) -> TmleFit:
    """Truncate, fluctuate, predict both counterfactuals, and assemble the fit.

    The plug-in estimate is psi_hat = mean(q1_star - q0_star). The efficient
    influence function is evaluated on the original outcome scale:

        D*_i = (A_i/g1_i)(Y_i - q1*_i) - ((1-A_i)/g0_i)(Y_i - q0*_i)
               + q1*_i - q0*_i - psi_hat

    with g the truncated propensities by default (``eif_propensity="raw"``
    switches to the untruncated fit).
    """
    strategy = Strategy(strategy)
    link = Link(link)
    if eif_propensity not in ("truncated", "raw"):
        raise ValueError(f"eif_propensity must be 'truncated' or 'raw', got {eif_propensity!r}")
    trunc = apply_truncation(nuis.propensity.fitted_g1, spec)
    if link is Link.LOGIT:
        fluct = _FLUCTUATE[(strategy, link)](
            nuis.q1_scaled, nuis.q0_scaled, nuis.y_scaled, ds.a, trunc
        )
        q1_star = predict_counterfactual(fluct, nuis.outcome.q1, trunc, 1, nuis.scaling)
        q0_star = predict_counterfactual(fluct, nuis.outcome.q0, trunc, 0, nuis.scaling)
    else:
        fluct = _FLUCTUATE[(strategy, link)](
            nuis.outcome.q1, nuis.outcome.q0, ds.y, ds.a, trunc
        )
        q1_star = predict_counterfactual(fluct, nuis.outcome.q1, trunc, 1, None)
        q0_star = predict_counterfactual(fluct, nuis.outcome.q0, trunc, 0, None)
    psi_hat = float(np.mean(q1_star - q0_star))
    if eif_propensity == "truncated":
        g1_eif, g0_eif = trunc.g1, trunc.g0
    else:
        g1_eif = nuis.propensity.fitted_g1
        g0_eif = 1.0 - nuis.propensity.fitted_g1
    eif = (
        ds.a / g1_eif * (ds.y - q1_star)
        - (1 - ds.a) / g0_eif * (ds.y - q0_star)
        + (q1_star - q0_star)
        - psi_hat
    )
    return TmleFit(
        q1_star=q1_star,
        q0_star=q0_star,
        psi_hat=psi_hat,
        eif=eif,
        fluct=fluct,
        trunc=trunc,
        spec=spec,
    )


def initial_psi(nuis: NuisanceFits) -> float:
    """Untargeted G-computation baseline: mean(q1 - q0) of the initial fit."""
    return float(np.mean(nuis.outcome.q1 - nuis.outcome.q0))
