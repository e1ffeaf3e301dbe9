"""Independent numerical oracles used to cross-check the library.

Everything here is deliberately brute-force and shares no code with the
package: Monte Carlo integration for population quantities, grid-refinement
and golden-section searches for maximum-likelihood and loss-minimization
problems, normal equations for least squares, and a hand-rolled type-7
quantile. Oracles favor transparency over speed.
"""

from __future__ import annotations

import math

import numpy as np


# --- population quantities under the simulation design ----------------------

def mc_true_ate(misspec: str, n_draws: int = 10_000_000, seed: int = 12345) -> float:
    """MC integration of E[tau(W)] under W ~ Uniform(-1,1)^4."""
    rng = np.random.default_rng(seed)
    total = 0.0
    chunk = 1_000_000
    remaining = n_draws
    while remaining > 0:
        m = min(chunk, remaining)
        w = rng.uniform(-1.0, 1.0, size=(m, 4))
        if misspec in ("high", "moderate"):
            tau = 3.0 + 2.0 * w[:, 0] - 0.5 * np.abs(w[:, 1]) + 0.5 * w[:, 2] - 2.0 * np.abs(w[:, 3])
        elif misspec == "nearly_correct":
            tau = 2.0 - 0.5 * np.abs(w[:, 0])
        else:
            raise ValueError(misspec)
        total += float(tau.sum())
        remaining -= m
    return total / n_draws


def mc_mean_propensity(kappa: float, n_draws: int = 10_000_000, seed: int = 54321) -> float:
    """MC integration of E[expit(kappa * (1.5 w1 + 2 w2 - w3 - 2.5 w4))]."""
    rng = np.random.default_rng(seed)
    total = 0.0
    chunk = 1_000_000
    remaining = n_draws
    while remaining > 0:
        m = min(chunk, remaining)
        w = rng.uniform(-1.0, 1.0, size=(m, 4))
        eta = kappa * (1.5 * w[:, 0] + 2.0 * w[:, 1] - w[:, 2] - 2.5 * w[:, 3])
        total += float((1.0 / (1.0 + np.exp(-eta))).sum())
        remaining -= m
    return total / n_draws


# --- brute-force optimizers --------------------------------------------------

def bernoulli_loglik(beta: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    eta = X @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def grid_refine_logistic(
    X: np.ndarray,
    y: np.ndarray,
    lo: float = -10.0,
    hi: float = 10.0,
    points: int = 41,
    rounds: int = 12,
) -> np.ndarray:
    """2-D grid search for the logistic MLE, refined around the best cell.

    Each round evaluates a points x points grid over the current box and
    shrinks the box around the maximizer. Resolution after r rounds is
    (hi-lo) * (4/points)^r per axis, far below 1e-4 for the defaults.
    """
    if X.shape[1] != 2:
        raise ValueError("grid oracle supports exactly 2 coefficients")
    b0_lo, b0_hi, b1_lo, b1_hi = lo, hi, lo, hi
    best = np.zeros(2)
    for _ in range(rounds):
        b0s = np.linspace(b0_lo, b0_hi, points)
        b1s = np.linspace(b1_lo, b1_hi, points)
        vals = np.array(
            [[bernoulli_loglik(np.array([b0, b1]), X, y) for b1 in b1s] for b0 in b0s]
        )
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        best = np.array([b0s[i], b1s[j]])
        span0 = (b0_hi - b0_lo) / (points - 1)
        span1 = (b1_hi - b1_lo) / (points - 1)
        b0_lo, b0_hi = best[0] - 2 * span0, best[0] + 2 * span0
        b1_lo, b1_hi = best[1] - 2 * span1, best[1] + 2 * span1
    return best


def golden_section_minimize(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Golden-section search for the minimizer of a unimodal f on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2.0


# --- fluctuation losses (for the golden-section oracle) ---------------------

def _binary_nll(p: np.ndarray, y: np.ndarray, w: np.ndarray | None = None) -> float:
    p = np.clip(p, 1e-300, 1.0 - 1e-16)
    terms = y * np.log(p) + (1.0 - y) * np.log(1.0 - p)
    if w is not None:
        terms = w * terms
    return -float(terms.sum())


def gh_logit_arm_loss(eps, q_scaled, y_scaled, mask, h_arm):
    """Unweighted Bernoulli loss on one arm with covariate H = 1/g_arm."""
    logit_q = np.log(q_scaled[mask] / (1.0 - q_scaled[mask]))
    p = 1.0 / (1.0 + np.exp(-(logit_q + eps * h_arm[mask])))
    return _binary_nll(p, y_scaled[mask])


def gwt_logit_arm_loss(eps, q_scaled, y_scaled, mask, weight):
    """Weighted Bernoulli loss on one arm with an intercept-only fluctuation."""
    logit_q = np.log(q_scaled[mask] / (1.0 - q_scaled[mask]))
    p = 1.0 / (1.0 + np.exp(-(logit_q + eps)))
    return _binary_nll(p, y_scaled[mask], weight[mask])


# --- linear algebra ----------------------------------------------------------

def normal_equations_ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares via the normal equations (independent of the package)."""
    return np.linalg.solve(X.T @ X, X.T @ y)


def offset_ols_epsilon(h: np.ndarray, residual: np.ndarray) -> float:
    """One-regressor no-intercept OLS: epsilon = sum(h r) / sum(h^2)."""
    return float(np.dot(h, residual) / np.dot(h, h))


# --- quantiles ---------------------------------------------------------------

def type7_quantile(draws, p: float) -> float:
    """Hand-rolled type-7 (linear interpolation) quantile."""
    xs = sorted(float(v) for v in draws)
    n = len(xs)
    if n == 1:
        return xs[0]
    pos = p * (n - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return xs[lo] * (1.0 - frac) + xs[hi] * frac
