import math

import numpy as np
import pytest

from tmletrunc import (
    Dataset,
    DegenerateArmsError,
    Misspec,
    Scenario,
    dump_dataset,
    gen_covariates,
    gen_dataset,
    load_dataset,
    stream,
    true_ate,
    true_outcome_mean,
    true_propensity,
)

from oracles import mc_mean_propensity


class _ConstantRng:
    """Stub stream whose uniform() emits a constant."""

    def __init__(self, value):
        self.value = value

    def uniform(self, low, high, size=None):
        return np.full(size, self.value) if size else self.value


def expit(x):
    return 1.0 / (1.0 + np.exp(-x))


class TestGenCovariates:
    def test_stubbed_stream_constant_row(self):
        w = gen_covariates(1, _ConstantRng(0.5))
        assert w.shape == (1, 4)
        assert np.all(w == 0.5)

    def test_large_sample_moments(self):
        w = gen_covariates(100_000, stream("covariate-moments"))
        assert np.all(np.abs(w.mean(axis=0)) < 0.01)
        assert np.all(np.abs(w.var(axis=0) - 1.0 / 3.0) < 0.01)

    def test_range(self):
        w = gen_covariates(10_000, stream("covariate-range"))
        assert w.min() >= -1.0 and w.max() <= 1.0


class TestTruePropensity:
    def test_zero_covariates(self):
        assert true_propensity(np.zeros(4), 1.0) == 0.5
        assert true_propensity(np.zeros(4), 3.0) == 0.5

    def test_positive_corner(self):
        p = true_propensity(np.array([1.0, 1.0, -1.0, -1.0]), 1.0)
        assert p == pytest.approx(expit(7.0), abs=1e-9)
        assert p == pytest.approx(0.999088, abs=1e-6)

    def test_negative_corner(self):
        p = true_propensity(np.array([-1.0, -1.0, 1.0, 1.0]), 3.0)
        assert p == pytest.approx(7.583e-10, rel=1e-3)

    def test_vectorized_matches_scalar(self):
        w = gen_covariates(50, stream("prop-vec"))
        vec = true_propensity(w, 2.0)
        scl = np.array([true_propensity(row, 2.0) for row in w])
        np.testing.assert_allclose(vec, scl, rtol=0, atol=1e-12)

    def test_strictly_inside_unit_interval_kappa1(self):
        w = gen_covariates(100_000, stream("prop-inf"))
        p = true_propensity(w, 1.0)
        assert p.min() >= expit(-7.0)
        assert p.max() <= expit(7.0)
        assert 0.0 < p.min() and p.max() < 1.0


class TestTrueOutcomeMean:
    def test_origin_treated_high(self):
        assert true_outcome_mean(np.zeros(4), 1, Misspec.HIGH) == 3.0

    def test_origin_control_nearly_correct(self):
        assert true_outcome_mean(np.zeros(4), 0, Misspec.NEARLY_CORRECT) == 0.0

    def test_ones_treated_high(self):
        assert true_outcome_mean(np.ones(4), 1, Misspec.HIGH) == 7.0

    def test_high_equals_moderate_truth(self):
        w = gen_covariates(100, stream("tom"))
        for a in (0, 1):
            np.testing.assert_array_equal(
                true_outcome_mean(w, a, Misspec.HIGH),
                true_outcome_mean(w, a, Misspec.MODERATE),
            )


class TestGenDataset:
    def test_determinism(self):
        sc = Scenario(n=200, kappa_pos=2.0, misspec=Misspec.HIGH, seed=17)
        d1, d2 = gen_dataset(sc), gen_dataset(sc)
        np.testing.assert_array_equal(d1.w, d2.w)
        np.testing.assert_array_equal(d1.a, d2.a)
        np.testing.assert_array_equal(d1.y, d2.y)

    def test_different_seeds_differ(self):
        d1 = gen_dataset(Scenario(n=200, kappa_pos=2.0, misspec=Misspec.HIGH, seed=1))
        d2 = gen_dataset(Scenario(n=200, kappa_pos=2.0, misspec=Misspec.HIGH, seed=2))
        assert not np.array_equal(d1.y, d2.y)

    def test_treatment_rate_matches_mc_oracle(self):
        ds = gen_dataset(
            Scenario(n=100_000, kappa_pos=1.0, misspec=Misspec.HIGH, seed=7)
        )
        oracle = mc_mean_propensity(1.0, n_draws=2_000_000)
        assert ds.a.mean() == pytest.approx(oracle, abs=0.01)

    def test_noise_variance(self):
        sc = Scenario(n=100_000, kappa_pos=1.0, misspec=Misspec.MODERATE, seed=11)
        ds = gen_dataset(sc)
        mean = true_outcome_mean(ds.w, 0, sc.misspec) + ds.a * (
            true_outcome_mean(ds.w, 1, sc.misspec) - true_outcome_mean(ds.w, 0, sc.misspec)
        )
        assert np.var(ds.y - mean) == pytest.approx(0.25, abs=0.01)

    def test_rct_independence(self):
        ds = gen_dataset(
            Scenario(n=100_000, kappa_pos=3.0, misspec=Misspec.HIGH, rct=True, seed=3)
        )
        assert ds.a.mean() == pytest.approx(0.5, abs=0.01)
        for j in range(4):
            corr = np.corrcoef(ds.a, ds.w[:, j])[0, 1]
            assert abs(corr) < 0.01
        assert ds.true_propensity is not None
        assert np.all(ds.true_propensity == 0.5)

    def test_degenerate_arm_raises(self):
        # kappa so extreme that tiny samples almost surely land in one arm
        found = False
        for seed in range(40):
            try:
                gen_dataset(Scenario(n=2, kappa_pos=60.0, misspec=Misspec.HIGH, seed=seed))
            except DegenerateArmsError:
                found = True
                break
        assert found, "no degenerate draw in 40 attempts at n=2, kappa=60"


class TestTrueAte:
    def test_all_levels_equal_175(self):
        for m in Misspec:
            assert true_ate(m) == pytest.approx(1.75, abs=1e-12)

    def test_constant_tau_unit_scenario(self):
        # tau constant = k has expectation k; exercised via the closed form
        # E[tau] = intercept when all covariate terms have mean zero.
        w = np.zeros((10, 4))
        tau = true_outcome_mean(w, 1, Misspec.NEARLY_CORRECT) - true_outcome_mean(
            w, 0, Misspec.NEARLY_CORRECT
        )
        assert np.all(tau == 2.0)


class TestScenario:
    def test_label_roundtrip_fields(self):
        sc = Scenario(n=500, kappa_pos=2.0, misspec="moderate", rct=True, seed=4)
        assert sc.misspec is Misspec.MODERATE
        assert sc.label() == "n500_k2_moderate_rct"

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            Scenario(n=0, kappa_pos=1.0, misspec=Misspec.HIGH)
        with pytest.raises(ValueError):
            Scenario(n=10, kappa_pos=-1.0, misspec=Misspec.HIGH)
        with pytest.raises(ValueError):
            Scenario(n=10, kappa_pos=1.0, misspec="bogus")


class TestCsvRoundTrip:
    def test_dump_load_identity(self, tmp_path):
        ds = gen_dataset(Scenario(n=50, kappa_pos=1.0, misspec=Misspec.HIGH, seed=23))
        path = tmp_path / "ds.csv"
        dump_dataset(ds, path)
        back = load_dataset(path)
        np.testing.assert_array_equal(ds.w, back.w)
        np.testing.assert_array_equal(ds.a, back.a)
        np.testing.assert_array_equal(ds.y, back.y)
        np.testing.assert_array_equal(ds.true_propensity, back.true_propensity)

    def test_non_binary_a_is_line_numbered_error(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("w1,w2,a,y\n0.1,0.2,1,3.0\n0.3,0.4,2,1.0\n")
        with pytest.raises(ValueError, match="line 3"):
            load_dataset(path)

    def test_malformed_row_is_line_numbered_error(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("w1,w2,a,y\n0.1,0.2,1,3.0\n0.3,oops,0,1.0\n")
        with pytest.raises(ValueError, match="line 3"):
            load_dataset(path)


class TestDataset:
    def test_shape_validation(self):
        with pytest.raises(ValueError):
            Dataset(w=np.zeros((5, 4)), a=np.zeros(4), y=np.zeros(5))
        with pytest.raises(ValueError):
            Dataset(w=np.zeros((5, 4)), a=np.full(5, 0.5), y=np.zeros(5))
