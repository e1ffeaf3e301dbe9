"""Synthetic data generation for the simulation study.

Covariates are drawn uniformly on [-1, 1]^4, treatment follows a logistic
propensity whose linear predictor is scaled by an overlap constant
``kappa_pos`` (larger values push propensities toward 0/1, inducing practical
positivity violations), and the continuous outcome is Gaussian around an
arm-specific mean whose shape depends on the misspecification level of the
working model that will later be fit to it.

All randomness flows through counter-based, splittable streams keyed by
SHA-256 hashes of caller-supplied labels, so any draw is reproducible in
isolation and replications can run in any order or in parallel.
"""

from __future__ import annotations

import csv
import enum
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

__all__ = [
    "N_COVARIATES",
    "NOISE_SD",
    "PROPENSITY_COEF",
    "Misspec",
    "Scenario",
    "Dataset",
    "DegenerateArmsError",
    "derive_key",
    "stream",
    "gen_covariates",
    "true_propensity",
    "true_outcome_mean",
    "gen_dataset",
    "true_ate",
    "dump_dataset",
    "load_dataset",
    "fmt_g17",
]

N_COVARIATES = 4

#: Coefficients of the propensity linear predictor, before kappa_pos scaling.
PROPENSITY_COEF = np.array([1.5, 2.0, -1.0, -2.5])

#: Standard deviation of the additive Gaussian outcome noise.
NOISE_SD = 0.5

#: E|W_j| for W_j ~ Uniform(-1, 1); used in the closed-form ATE.
_MEAN_ABS_UNIFORM = 0.5


class Misspec(str, enum.Enum):
    """Degree of outcome-regression misspecification a scenario induces.

    The data-generating process pairs with a linear working model; the enum
    controls both the true outcome surface and which covariates that working
    model will include (under ``HIGH`` the fitted regression omits W1).
    """

    HIGH = "high"
    MODERATE = "moderate"
    NEARLY_CORRECT = "nearly_correct"


class DegenerateArmsError(RuntimeError):
    """Raised when a generated dataset has all observations in one arm."""


@dataclass(frozen=True)
class Scenario:
    """One cell of the simulation design.

    Parameters
    ----------
    n : int
        Sample size, at least 2.
    kappa_pos : float
        Positive scaling of the propensity linear predictor; 1, 2, 3 in the
        study grid (3 = severe practical positivity violation).
    misspec : Misspec
        Outcome-regression misspecification level.
    rct : bool
        If true, treatment is Bernoulli(0.5) independent of W (no positivity
        violation baseline).
    seed : int
        64-bit stream seed; two scenarios differing only in seed generate
        independent data.
    """

    n: int
    kappa_pos: float
    misspec: Misspec
    rct: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"scenario requires n >= 2, got {self.n}")
        if not self.kappa_pos > 0:
            raise ValueError(f"kappa_pos must be positive, got {self.kappa_pos}")
        # Accept plain strings for convenience, normalize to the enum.
        if not isinstance(self.misspec, Misspec):
            object.__setattr__(self, "misspec", Misspec(self.misspec))

    def label(self) -> str:
        """Stable human-readable identifier used in stream keys and CSVs."""
        tag = f"n{self.n}_k{self.kappa_pos:g}_{self.misspec.value}"
        return tag + ("_rct" if self.rct else "")


@dataclass
class Dataset:
    """Observed data O = (W, A, Y) plus the generating propensity.

    ``true_propensity`` is the assignment probability actually used for the
    treatment draw (0.5 under an RCT scenario); it is retained for diagnostics
    only and never consumed by the estimators. It is ``None`` for datasets
    loaded from user CSVs that lack the column.
    """

    w: np.ndarray
    a: np.ndarray
    y: np.ndarray
    true_propensity: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.w = np.atleast_2d(np.asarray(self.w, dtype=float))
        a = np.asarray(self.a, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        n = self.w.shape[0]
        if a.shape != (n,) or self.y.shape != (n,):
            raise ValueError("W, A, Y must have consistent first dimension")
        if not np.isin(a, (0.0, 1.0)).all():
            raise ValueError("treatment vector must be binary")
        self.a = a.astype(np.int64)
        if self.true_propensity is not None:
            self.true_propensity = np.asarray(self.true_propensity, dtype=float)
            if self.true_propensity.shape != (n,):
                raise ValueError("true_propensity length mismatch")

    @property
    def n(self) -> int:
        return self.w.shape[0]


def derive_key(*parts: object) -> tuple[int, int]:
    """Derive a 128-bit Philox key from a canonical string of label parts.

    Parts are joined with ``|`` after ``str`` conversion, hashed with SHA-256,
    and the first 16 bytes are split into two little-endian uint64 words.
    """
    canon = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(canon.encode("utf-8")).digest()
    return (
        int.from_bytes(digest[:8], "little"),
        int.from_bytes(digest[8:16], "little"),
    )


def stream(*parts: object) -> np.random.Generator:
    """Return an independent random stream keyed by the given label parts."""
    return np.random.Generator(np.random.Philox(key=derive_key(*parts)))


def gen_covariates(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an n x 4 covariate matrix with i.i.d. Uniform(-1, 1) entries."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    return rng.uniform(-1.0, 1.0, size=(n, N_COVARIATES))


def true_propensity(w: np.ndarray, kappa_pos: float) -> np.ndarray | float:
    """P(A=1 | W) = expit(kappa_pos * (1.5 W1 + 2 W2 - W3 - 2.5 W4)).

    Accepts a single 4-vector (returns a float) or an n x 4 matrix (returns a
    length-n vector). Values are strictly inside (0, 1).
    """
    w = np.asarray(w, dtype=float)
    eta = kappa_pos * (w @ PROPENSITY_COEF)
    p = expit(eta)
    return float(p) if np.ndim(p) == 0 else p


def true_outcome_mean(
    w: np.ndarray, a: np.ndarray | int, misspec: Misspec | str
) -> np.ndarray | float:
    """E[Y | A=a, W=w] under the scenario's outcome surface.

    High/Moderate share one surface (they differ only in the working model fit
    to the data later); NearlyCorrect uses an almost-linear surface.
    """
    misspec = Misspec(misspec)
    w = np.atleast_2d(np.asarray(w, dtype=float))
    w1, w2, w3, w4 = w[:, 0], w[:, 1], w[:, 2], w[:, 3]
    if misspec is Misspec.NEARLY_CORRECT:
        mu0 = w1 + w2 + w3 + w4
        tau = 2.0 - 0.5 * np.abs(w1)
    else:
        mu0 = w1 + np.abs(w2) + w3 + np.abs(w4)
        tau = 3.0 + 2.0 * w1 - 0.5 * np.abs(w2) + 0.5 * w3 - 2.0 * np.abs(w4)
    mean = mu0 + np.asarray(a) * tau
    return float(mean[0]) if mean.shape == (1,) else mean


def gen_dataset(scenario: Scenario) -> Dataset:
    """Generate one dataset from the scenario, reproducibly from its seed.

    Raises
    ------
    DegenerateArmsError
        If the treatment draw leaves one arm empty. The caller owns the retry
        policy; nothing is silently re-drawn here.
    """
    rng = stream(
        "dataset",
        scenario.seed,
        scenario.n,
        f"{scenario.kappa_pos:.17g}",
        scenario.misspec.value,
        int(scenario.rct),
    )
    w = gen_covariates(scenario.n, rng)
    if scenario.rct:
        assign_p = np.full(scenario.n, 0.5)
    else:
        assign_p = true_propensity(w, scenario.kappa_pos)
    a = (rng.random(scenario.n) < assign_p).astype(np.int64)
    if a.all() or not a.any():
        raise DegenerateArmsError(
            f"all {scenario.n} observations landed in arm {int(a[0])} "
            f"(scenario {scenario.label()}, seed {scenario.seed})"
        )
    y = true_outcome_mean(w, a, scenario.misspec) + NOISE_SD * rng.standard_normal(
        scenario.n
    )
    return Dataset(w=w, a=a, y=y, true_propensity=np.asarray(assign_p, dtype=float))


def true_ate(misspec: Misspec | str) -> float:
    """E[tau(W)] under W ~ Uniform(-1,1)^4, in closed form.

    Odd linear terms integrate to zero and E|W_j| = 1/2, so both outcome
    surfaces give the same target value.
    """
    misspec = Misspec(misspec)
    if misspec is Misspec.NEARLY_CORRECT:
        return 2.0 - 0.5 * _MEAN_ABS_UNIFORM
    return 3.0 - 0.5 * _MEAN_ABS_UNIFORM - 2.0 * _MEAN_ABS_UNIFORM


def fmt_g17(value: float) -> str:
    """Format a float with 17 significant digits (exact double round-trip)."""
    return "%.17g" % value


def dump_dataset(ds: Dataset, path: str | Path) -> None:
    """Write a dataset as CSV: w1..wK, a, y and true_g when available."""
    path = Path(path)
    k = ds.w.shape[1]
    header = [f"w{j + 1}" for j in range(k)] + ["a", "y"]
    if ds.true_propensity is not None:
        header.append("true_g")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n):
            row = [fmt_g17(v) for v in ds.w[i]] + [str(int(ds.a[i])), fmt_g17(ds.y[i])]
            if ds.true_propensity is not None:
                row.append(fmt_g17(ds.true_propensity[i]))
            writer.writerow(row)


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset CSV produced by :func:`dump_dataset` or user-supplied.

    Requires columns ``a`` and ``y`` plus at least one covariate column whose
    name starts with ``w``; a ``true_g`` column is picked up when present.
    Malformed rows are reported with their 1-based line number.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        w_cols = [i for i, h in enumerate(header) if h.lower().startswith("w")]
        if not w_cols:
            raise ValueError(f"{path}: no covariate columns (names starting with 'w')")
        try:
            a_col = header.index("a")
            y_col = header.index("y")
        except ValueError:
            raise ValueError(f"{path}: missing required column 'a' or 'y'") from None
        g_col = header.index("true_g") if "true_g" in header else None

        w_rows: list[list[float]] = []
        a_rows: list[int] = []
        y_rows: list[float] = []
        g_rows: list[float] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ValueError(
                    f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                w_rows.append([float(row[i]) for i in w_cols])
                a_val = float(row[a_col])
                y_rows.append(float(row[y_col]))
                if g_col is not None:
                    g_rows.append(float(row[g_col]))
            except ValueError as exc:
                raise ValueError(f"{path}: line {line_no}: {exc}") from None
            if a_val not in (0.0, 1.0):
                raise ValueError(
                    f"{path}: line {line_no}: treatment must be 0 or 1, got {row[a_col]!r}"
                )
            a_rows.append(int(a_val))
    if not w_rows:
        raise ValueError(f"{path}: no data rows")
    return Dataset(
        w=np.array(w_rows),
        a=np.array(a_rows),
        y=np.array(y_rows),
        true_propensity=np.array(g_rows) if g_col is not None else None,
    )
