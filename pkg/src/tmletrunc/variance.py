"""Variance estimators for the targeted ATE and the intervals built from them.

Three estimators are provided:

* EIF: the sample variance of the efficient influence function, (1/n^2) sum D*^2.
  Asymptotically valid but prone to downward bias under practical positivity
  violations, where huge inverse-probability weights are rarely realized.
* Plug-in: decomposes Var(D*) into an inverse-probability-weighted conditional
  residual variance term plus a treatment-effect-heterogeneity term, then
  divides by n to land on the Var(psi_hat) scale.
* Targeted bootstrap (TB): resamples rows with replacement, keeps the initial
  nuisance fits frozen, refits only the fluctuation, and takes the sample
  variance of the resulting plug-in estimates. The refit is vectorized across
  bootstrap replicates.

``MC`` appears in the method enum for the simulation harness, which measures
the Monte Carlo variance of psi_hat across replications as a ground-truth
comparator; it is not computable from a single dataset.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .datagen import Dataset
from .nuisance import NuisanceFits, ResidualVarianceFit
from .targeting import EPS_BRACKET, Link, Strategy
from .truncation import TruncatedPropensity, TruncationSpec, apply_truncation

__all__ = [
    "Z_95",
    "VarianceMethod",
    "VarianceEstimate",
    "ConfidenceInterval",
    "var_eif",
    "var_plugin",
    "var_targeted_bootstrap",
    "wald_ci",
    "percentile_ci",
]

#: Normal quantile used for 95% Wald intervals.
Z_95 = 1.96

#: Minimum retained bootstrap draws for a percentile interval.
MIN_PERCENTILE_DRAWS = 40

#: Fraction of dropped bootstrap replicates above which the estimate is flagged.
_DROP_FLAG_FRACTION = 0.10


class VarianceMethod(str, enum.Enum):
    EIF = "eif"
    PLUGIN = "plugin"
    TB = "tb"
    MC = "mc"


@dataclass
class VarianceEstimate:
    """A variance value tagged with the method that produced it."""

    method: VarianceMethod
    value: float
    b_reps: int | None = None
    quantiles: tuple[float, float] | None = None
    dropped: int = 0
    flagged: bool = False
    psis: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.value < 0:
            raise ValueError(f"variance must be nonnegative, got {self.value}")
        if self.method is VarianceMethod.TB and (self.b_reps is None or self.b_reps < 2):
            raise ValueError("targeted bootstrap requires b_reps >= 2")


@dataclass(frozen=True)
class ConfidenceInterval:
    lower: float
    upper: float
    level: float = 0.95

    def __post_init__(self) -> None:
        if self.lower > self.upper:
            raise ValueError(f"interval bounds out of order: [{self.lower}, {self.upper}]")

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def var_eif(eif: np.ndarray) -> VarianceEstimate:
    """Sample variance of the (already centered) influence function.

    Var_hat(psi_hat) = (1/n^2) sum_i D*_i^2.
    """
    eif = np.asarray(eif, dtype=float)
    n = eif.size
    if n < 2:
        raise ValueError("EIF variance requires n >= 2")
    return VarianceEstimate(VarianceMethod.EIF, float(np.sum(eif * eif) / n**2))


def var_plugin(
    rv: ResidualVarianceFit,
    g: TruncatedPropensity,
    q1: np.ndarray,
    q0: np.ndarray,
    psi_hat: float,
) -> VarianceEstimate:
    """Plug-in decomposition of the influence-function variance, over n.

    value = [ mean(sigma2(1,W)/g1 + sigma2(0,W)/g0)
              + mean((q1 - q0 - psi_hat)^2) ] / n

    The q arrays are whatever the caller wants inference about; the targeted
    predictions are the intended default.
    """
    n = q1.shape[0]
    residual_term = float(np.mean(rv.sigma2_1 / g.g1 + rv.sigma2_0 / g.g0))
    heterogeneity = float(np.mean((q1 - q0 - psi_hat) ** 2))
    return VarianceEstimate(VarianceMethod.PLUGIN, (residual_term + heterogeneity) / n)


def _solve_score_batch(
    x: np.ndarray,
    w: np.ndarray,
    offset: np.ndarray,
    y: np.ndarray,
    counts: np.ndarray,
    *,
    score_tol: float = 1e-9,
    max_iter: int = 60,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized arm-score roots across bootstrap replicates.

    For each replicate b, solves
    sum_j counts[b,j] w_j x_j (y_j - expit(offset_j + e x_j)) = 0 over e,
    with the same bracketed Newton/bisection scheme as the single fit.
    Returns (epsilons, converged) of shape (B,).
    """
    n_reps = counts.shape[0]
    wx = w * x
    wxx = wx * x
    target = counts @ (wx * y)
    eps = np.zeros(n_reps)
    lo = np.full(n_reps, -EPS_BRACKET)
    hi = np.full(n_reps, EPS_BRACKET)
    converged = np.zeros(n_reps, dtype=bool)
    active = counts.sum(axis=1) > 0  # empty-arm replicates never converge
    for _ in range(max_iter):
        if not active.any():
            break
        z = offset[None, :] + eps[active, None] * x[None, :]
        p = expit(z)
        c_act = counts[active]
        cw = c_act * p
        score = target[active] - cw @ wx
        deriv = (cw * (1.0 - p)) @ wxx
        done = np.abs(score) < score_tol
        pos = score > 0.0
        idx = np.flatnonzero(active)
        lo[idx[pos]] = eps[idx[pos]]
        hi[idx[~pos]] = eps[idx[~pos]]
        with np.errstate(divide="ignore", invalid="ignore"):
            candidate = eps[idx] + score / deriv
        bad = ~np.isfinite(candidate) | (candidate <= lo[idx]) | (candidate >= hi[idx])
        candidate[bad] = 0.5 * (lo[idx][bad] + hi[idx][bad])
        stalled = candidate == eps[idx]
        converged[idx[done]] = True
        newly_inactive = done | stalled
        eps[idx[~newly_inactive]] = candidate[~newly_inactive]
        active[idx[newly_inactive]] = False
    return eps, converged


def var_targeted_bootstrap(
    ds: Dataset,
    nuis: NuisanceFits,
    spec: TruncationSpec,
    strategy: Strategy | str,
    link: Link | str,
    b_reps: int,
    rng: np.random.Generator,
    *,
    score_tol: float = 1e-9,
    max_iter: int = 60,
) -> VarianceEstimate:
    """Targeted bootstrap: resample rows, refit only the fluctuation.

    Nuisance fits (propensity, outcome regression, outcome scaling) stay
    frozen; for each of ``b_reps`` resamples the fluctuation is re-estimated
    and the plug-in estimate recomputed over the resampled rows. Replicates
    with an empty arm or a non-convergent fluctuation are dropped and counted;
    the estimate is flagged when more than 10% drop. The returned value is the
    sample variance (divisor B-1) of the retained estimates, and ``quantiles``
    holds their empirical (2.5%, 97.5%) points.
    """
    strategy = Strategy(strategy)
    link = Link(link)
    if b_reps < 2:
        raise ValueError("targeted bootstrap requires b_reps >= 2")
    n = ds.n
    trunc = apply_truncation(nuis.propensity.fitted_g1, spec)
    draw = rng.integers(0, n, size=(b_reps, n))
    counts = (
        np.bincount(
            (np.arange(b_reps)[:, None] * n + draw).ravel(), minlength=b_reps * n
        )
        .reshape(b_reps, n)
        .astype(float)
    )
    treated = ds.a == 1
    control = ~treated
    c1 = counts[:, treated]
    c0 = counts[:, control]
    nonempty = (c1.sum(axis=1) > 0) & (c0.sum(axis=1) > 0)

    if link is Link.LOGIT:
        y_t = nuis.y_scaled
        off1 = logit(nuis.q1_scaled)
        off0 = logit(nuis.q0_scaled)
        if strategy is Strategy.GH:
            x1, w1 = 1.0 / trunc.g1[treated], np.ones(int(treated.sum()))
            x0, w0 = 1.0 / trunc.g0[control], np.ones(int(control.sum()))
        else:
            x1, w1 = np.ones(int(treated.sum())), 1.0 / trunc.g1[treated]
            x0, w0 = np.ones(int(control.sum())), 1.0 / trunc.g0[control]
        eps1, ok1 = _solve_score_batch(
            x1, w1, off1[treated], y_t[treated], c1, score_tol=score_tol, max_iter=max_iter
        )
        eps0, ok0 = _solve_score_batch(
            x0, w0, off0[control], y_t[control], c0, score_tol=score_tol, max_iter=max_iter
        )
        if strategy is Strategy.GH:
            z1 = off1[None, :] + eps1[:, None] / trunc.g1[None, :]
            z0 = off0[None, :] + eps0[:, None] / trunc.g0[None, :]
        else:
            z1 = off1[None, :] + eps1[:, None]
            z0 = off0[None, :] + eps0[:, None]
        diff = nuis.scaling.unscale(expit(z1)) - nuis.scaling.unscale(expit(z0))
    else:
        q1, q0, y = nuis.outcome.q1, nuis.outcome.q0, ds.y
        r1 = y[treated] - q1[treated]
        r0 = y[control] - q0[control]
        if strategy is Strategy.GH:
            h1 = 1.0 / trunc.g1[treated]
            h0 = 1.0 / trunc.g0[control]
            den1 = c1 @ (h1 * h1)
            den0 = c0 @ (h0 * h0)
            with np.errstate(divide="ignore", invalid="ignore"):
                eps1 = np.where(den1 > 0, (c1 @ (h1 * r1)) / den1, np.nan)
                eps0 = np.where(den0 > 0, (c0 @ (h0 * r0)) / den0, np.nan)
            diff = (q1[None, :] + eps1[:, None] / trunc.g1[None, :]) - (
                q0[None, :] + eps0[:, None] / trunc.g0[None, :]
            )
        else:
            w1 = 1.0 / trunc.g1[treated]
            w0 = 1.0 / trunc.g0[control]
            den1 = c1 @ w1
            den0 = c0 @ w0
            with np.errstate(divide="ignore", invalid="ignore"):
                eps1 = np.where(den1 > 0, (c1 @ (w1 * r1)) / den1, np.nan)
                eps0 = np.where(den0 > 0, (c0 @ (w0 * r0)) / den0, np.nan)
            diff = (q1[None, :] + eps1[:, None]) - (q0[None, :] + eps0[:, None])
        ok1 = np.isfinite(eps1)
        ok0 = np.isfinite(eps0)

    valid = nonempty & ok1 & ok0
    psis = (counts * diff).sum(axis=1) / n
    retained = psis[valid]
    dropped = int(b_reps - valid.sum())
    if retained.size < 2:
        raise RuntimeError(
            f"targeted bootstrap retained {retained.size} of {b_reps} replicates; "
            "cannot form a variance"
        )
    quantiles = np.quantile(retained, (0.025, 0.975))
    return VarianceEstimate(
        method=VarianceMethod.TB,
        value=float(np.var(retained, ddof=1)),
        b_reps=b_reps,
        quantiles=(float(quantiles[0]), float(quantiles[1])),
        dropped=dropped,
        flagged=dropped > _DROP_FLAG_FRACTION * b_reps,
        psis=retained,
    )


def wald_ci(psi_hat: float, v: VarianceEstimate | float) -> ConfidenceInterval:
    """psi_hat +/- 1.96 * sqrt(variance)."""
    value = v.value if isinstance(v, VarianceEstimate) else float(v)
    if value < 0:
        raise ValueError(f"variance must be nonnegative, got {value}")
    half = Z_95 * float(np.sqrt(value))
    return ConfidenceInterval(psi_hat - half, psi_hat + half)


def percentile_ci(boot_psis: np.ndarray) -> ConfidenceInterval:
    """Empirical (2.5%, 97.5%) interval with linear (type-7) interpolation."""
    boot_psis = np.asarray(boot_psis, dtype=float)
    if boot_psis.size < MIN_PERCENTILE_DRAWS:
        raise ValueError(
            f"percentile interval requires at least {MIN_PERCENTILE_DRAWS} retained "
            f"draws, got {boot_psis.size}"
        )
    q = np.quantile(boot_psis, (0.025, 0.975))
    return ConfidenceInterval(float(q[0]), float(q[1]))
