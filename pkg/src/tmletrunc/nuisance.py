"""Initial nuisance fits: propensity, outcome regression, outcome scaling.

The propensity model is a correctly specified logistic regression on all
covariates, fit by Newton/IRLS with step-halving. The outcome model is a
Gaussian linear working model on main effects {1, A, selected W columns};
under high misspecification the first covariate is omitted, mirroring the
study design. Continuous outcomes are mapped to [0, 1] for the logistic-link
targeting step, with fitted values clamped away from the boundary so logits
stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit

from .datagen import Dataset, Misspec

__all__ = [
    "PropensityFit",
    "OutcomeFit",
    "OutcomeScaling",
    "ResidualVarianceFit",
    "NuisanceFits",
    "RankDeficiencyError",
    "fit_logistic",
    "fit_ols",
    "fit_outcome",
    "scale_outcome",
    "fit_residual_variance",
    "fit_nuisances",
]

#: Default clamp for scaled predictions entering a logit.
CLAMP_DELTA = 0.005

#: Lower floor for estimated conditional residual variances.
SIGMA2_FLOOR = 1e-6

#: Coefficient-norm bound past which the logistic fit is flagged as diverging
#: (complete or quasi-complete separation).
_DIVERGENCE_BOUND = 30.0

#: Keep fitted probabilities strictly inside (0, 1).
_PROB_EPS = 1e-12


class RankDeficiencyError(ValueError):
    """Raised when a design matrix is rank deficient; names the column."""

    def __init__(self, column: int, rank: int, ncols: int):
        self.column = column
        super().__init__(
            f"design matrix is rank deficient (rank {rank} of {ncols}); "
            f"column {column} is linearly dependent on the others"
        )


@dataclass
class PropensityFit:
    """Logistic regression fit for P(A=1 | W)."""

    coefficients: np.ndarray
    fitted_g1: np.ndarray
    converged: bool
    iterations: int


@dataclass
class OutcomeFit:
    """Linear outcome working-model fit with counterfactual predictions."""

    coefficients: np.ndarray
    q1: np.ndarray
    q0: np.ndarray
    included_covariates: tuple[int, ...]


@dataclass(frozen=True)
class OutcomeScaling:
    """Affine map of the outcome to [0, 1] and its clamping rule."""

    lower: float
    upper: float
    clamp_delta: float = CLAMP_DELTA

    def __post_init__(self) -> None:
        if not self.upper > self.lower:
            raise ValueError("outcome scaling requires upper > lower (non-constant y)")

    @classmethod
    def from_y(cls, y: np.ndarray, clamp_delta: float = CLAMP_DELTA) -> "OutcomeScaling":
        y = np.asarray(y, dtype=float)
        if y.size < 2:
            raise ValueError("outcome scaling requires at least two observations")
        return cls(lower=float(y.min()), upper=float(y.max()), clamp_delta=clamp_delta)

    def scale(self, v: np.ndarray) -> np.ndarray:
        return (np.asarray(v, dtype=float) - self.lower) / (self.upper - self.lower)

    def clamp(self, v_scaled: np.ndarray) -> np.ndarray:
        return np.clip(v_scaled, self.clamp_delta, 1.0 - self.clamp_delta)

    def scale_clamp(self, v: np.ndarray) -> np.ndarray:
        return self.clamp(self.scale(v))

    def unscale(self, v_scaled: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(v_scaled, dtype=float) * (self.upper - self.lower)


@dataclass
class ResidualVarianceFit:
    """Per-arm linear models for Var(Y | A=a, W), evaluated at every row."""

    coefficients_by_arm: tuple[np.ndarray, np.ndarray]
    sigma2_1: np.ndarray
    sigma2_0: np.ndarray


@dataclass
class NuisanceFits:
    """Everything the targeting step consumes, fit once per dataset."""

    propensity: PropensityFit
    outcome: OutcomeFit
    scaling: OutcomeScaling
    y_scaled: np.ndarray
    q1_scaled: np.ndarray
    q0_scaled: np.ndarray
    resid_var: ResidualVarianceFit | None = None


def _bernoulli_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    # log p(y) = y*eta - log(1 + exp(eta)), computed stably.
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def fit_logistic(
    X: np.ndarray,
    y: np.ndarray,
    *,
    max_iter: int = 100,
    score_tol: float = 1e-8,
    step_tol: float = 1e-10,
) -> PropensityFit:
    """Maximum-likelihood logistic regression via Newton/IRLS.

    Convergence is declared when the maximum absolute score component falls
    below ``score_tol`` or the coefficient step below ``step_tol``. Diverging
    coefficient norms (separation) and exhausted iterations return the last
    iterate flagged ``converged=False``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more observations than parameters (n={n}, p={p})")
    beta = np.zeros(p)
    ll = _bernoulli_loglik(X @ beta, y)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eta = X @ beta
        prob = expit(eta)
        score = X.T @ (y - prob)
        if np.max(np.abs(score)) < score_tol:
            converged = True
            break
        weights = np.maximum(prob * (1.0 - prob), _PROB_EPS)
        hessian = X.T @ (X * weights[:, None])
        try:
            step = np.linalg.solve(hessian, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hessian, score, rcond=None)[0]
        # Step-halving: back off until the likelihood stops decreasing.
        t = 1.0
        improved = False
        while t >= 2.0**-30:
            candidate = beta + t * step
            ll_new = _bernoulli_loglik(X @ candidate, y)
            if ll_new >= ll:
                beta, ll = candidate, ll_new
                improved = True
                break
            t *= 0.5
        if not improved:
            break  # no ascent direction left at float precision
        if np.max(np.abs(beta)) > _DIVERGENCE_BOUND:
            break  # separation: coefficients are running away
        if np.max(np.abs(t * step)) < step_tol:
            converged = True
            break
    else:
        iterations = max_iter
    if not converged:
        # Final score check: the loop may have exited right at the optimum.
        score = X.T @ (y - expit(X @ beta))
        converged = bool(
            np.max(np.abs(score)) < score_tol
            and np.max(np.abs(beta)) <= _DIVERGENCE_BOUND
        )
    fitted = np.clip(expit(X @ beta), _PROB_EPS, 1.0 - _PROB_EPS)
    return PropensityFit(
        coefficients=beta, fitted_g1=fitted, converged=converged, iterations=iterations
    )


def fit_ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least-squares coefficients via pivoted QR, with a rank check.

    Raises
    ------
    RankDeficiencyError
        If the design is rank deficient; the error names the first column (in
        pivot order) that adds no rank.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    q, r, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = (diag[0] if diag.size else 0.0) * max(n, p) * np.finfo(float).eps
    rank = int(np.sum(diag > tol))
    if rank < p:
        raise RankDeficiencyError(column=int(piv[rank]), rank=rank, ncols=p)
    coef_pivoted = scipy.linalg.solve_triangular(r, q.T @ y)
    coef = np.empty(p)
    coef[piv] = coef_pivoted
    return coef


def _outcome_columns(misspec: Misspec | str, n_covariates: int) -> tuple[int, ...]:
    misspec = Misspec(misspec)
    if misspec is Misspec.HIGH:
        return tuple(range(1, n_covariates))  # omit W1
    return tuple(range(n_covariates))


def fit_outcome(ds: Dataset, misspec: Misspec | str) -> OutcomeFit:
    """OLS of Y on {1, A, included W columns}, with predictions per arm."""
    if ds.a.all() or not ds.a.any():
        raise ValueError("outcome fit requires observations in both arms")
    included = _outcome_columns(misspec, ds.w.shape[1])
    w_incl = ds.w[:, included]
    X = np.column_stack([np.ones(ds.n), ds.a, w_incl])
    coef = fit_ols(X, ds.y)
    base = coef[0] + w_incl @ coef[2:]
    return OutcomeFit(
        coefficients=coef, q1=base + coef[1], q0=base, included_covariates=included
    )


def scale_outcome(
    y: np.ndarray, q: np.ndarray, *, clamp_delta: float = CLAMP_DELTA
) -> tuple[OutcomeScaling, np.ndarray, np.ndarray]:
    """Map y to [0, 1] by its observed range; scale and clamp predictions.

    The outcome itself is not clamped (its scaled values already lie in
    [0, 1]); predictions are clamped to [clamp_delta, 1 - clamp_delta].
    """
    scaling = OutcomeScaling.from_y(y, clamp_delta=clamp_delta)
    return scaling, scaling.scale(y), scaling.scale_clamp(q)


def fit_residual_variance(
    ds: Dataset, outcome: OutcomeFit, *, floor: float = SIGMA2_FLOOR
) -> ResidualVarianceFit:
    """Estimate Var(Y | A=a, W) by regressing squared residuals on {1, W}.

    One OLS per arm on that arm's rows, all covariates included; each arm's
    model is then evaluated at every row and floored at ``floor``.
    """
    q_at_a = np.where(ds.a == 1, outcome.q1, outcome.q0)
    r2 = (ds.y - q_at_a) ** 2
    design_all = np.column_stack([np.ones(ds.n), ds.w])
    p = design_all.shape[1]
    coefs: list[np.ndarray] = []
    preds: list[np.ndarray] = []
    for arm in (1, 0):
        rows = ds.a == arm
        if rows.sum() < p:
            raise ValueError(
                f"arm {arm} has {int(rows.sum())} observations; "
                f"residual-variance fit needs at least {p}"
            )
        coef = fit_ols(design_all[rows], r2[rows])
        coefs.append(coef)
        preds.append(np.maximum(design_all @ coef, floor))
    return ResidualVarianceFit(
        coefficients_by_arm=(coefs[0], coefs[1]), sigma2_1=preds[0], sigma2_0=preds[1]
    )


def fit_nuisances(
    ds: Dataset,
    misspec: Misspec | str,
    *,
    clamp_delta: float = CLAMP_DELTA,
    with_residual_variance: bool = True,
) -> NuisanceFits:
    """Fit every nuisance component once for a dataset."""
    design_g = np.column_stack([np.ones(ds.n), ds.w])
    propensity = fit_logistic(design_g, ds.a.astype(float))
    outcome = fit_outcome(ds, misspec)
    scaling, y_scaled, q1_scaled = scale_outcome(
        ds.y, outcome.q1, clamp_delta=clamp_delta
    )
    q0_scaled = scaling.scale_clamp(outcome.q0)
    resid_var = (
        fit_residual_variance(ds, outcome) if with_residual_variance else None
    )
    return NuisanceFits(
        propensity=propensity,
        outcome=outcome,
        scaling=scaling,
        y_scaled=y_scaled,
        q1_scaled=q1_scaled,
        q0_scaled=q0_scaled,
        resid_var=resid_var,
    )
