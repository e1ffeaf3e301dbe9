import numpy as np
import pytest

from tmletrunc import Dataset, Misspec, Scenario, fit_nuisances, gen_dataset
from tmletrunc.truncation import TruncatedPropensity


@pytest.fixture(scope="session")
def eight_obs():
    """Fixed 8-observation fluctuation fixture: scaled q, scaled y, a, g.

    Treatment probabilities span two orders of magnitude so the clever
    covariates are genuinely uneven; both arms have four observations.
    """
    a = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=float)
    y_scaled = np.array([0.90, 0.30, 0.60, 0.80, 0.20, 0.50, 0.10, 0.40])
    q_scaled = np.array([0.70, 0.40, 0.50, 0.60, 0.30, 0.45, 0.25, 0.35])
    g1 = np.array([0.05, 0.30, 0.70, 0.90, 0.20, 0.50, 0.08, 0.60])
    g = TruncatedPropensity(
        g1=g1, g0=1.0 - g1, activated_1=0, activated_0=0, bound=0.01
    )
    return q_scaled, y_scaled, a, g


@pytest.fixture(scope="session")
def eight_obs_original():
    """Same layout on the original outcome scale (for the linear link)."""
    a = np.array([1, 1, 1, 1, 0, 0, 0, 0], dtype=float)
    y = np.array([4.2, 1.1, 2.9, 3.8, 0.7, 2.3, 0.2, 1.6])
    q = np.array([3.1, 1.5, 2.2, 2.8, 1.0, 2.0, 0.8, 1.4])
    g1 = np.array([0.05, 0.30, 0.70, 0.90, 0.20, 0.50, 0.08, 0.60])
    g = TruncatedPropensity(
        g1=g1, g0=1.0 - g1, activated_1=0, activated_0=0, bound=0.01
    )
    return q, y, a, g


@pytest.fixture(scope="session")
def moderate_fit():
    """One medium dataset with a complete nuisance fit, shared across tests."""
    ds = gen_dataset(Scenario(n=400, kappa_pos=2.0, misspec=Misspec.MODERATE, seed=314))
    nuis = fit_nuisances(ds, Misspec.MODERATE)
    return ds, nuis


def make_linear_dataset(n=120, sd=0.0, coef_a=2.5, seed=99) -> Dataset:
    """Outcome exactly (or nearly) affine in (A, W): Y = 1 + coef_a*A + W@b + noise."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, size=(n, 4))
    a = (rng.uniform(size=n) < 0.5).astype(float)
    if a.sum() in (0, n):  # pragma: no cover - seed chosen to avoid this
        a[0], a[1] = 1.0, 0.0
    b = np.array([0.5, -1.0, 0.25, 2.0])
    y = 1.0 + coef_a * a + w @ b + (sd * rng.standard_normal(n) if sd else 0.0)
    return Dataset(w=w, a=a, y=y)
