import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recomblab.metrics import (
    MetricsReport,
    TC_CONVENTION,
    block_norm_corr,
    fit_gaussian,
    frechet_from_moments,
    frechet_gaussian,
    full_report,
    gaussian_tc,
    mahalanobis2,
    mcc,
    mig,
)
from recomblab.numerics import NotPositiveDefinite, random_orthogonal
from recomblab.synthdata import make_dataset

RAW_SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def raw_datasets():
    return [make_dataset(s, 20000) for s in RAW_SEEDS]


def eig_sqrt(a):
    w, v = np.linalg.eigh(a)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def frechet_oracle(mu_a, ca, mu_b, cb):
    ra = eig_sqrt(ca)
    return float(np.sum((mu_a - mu_b) ** 2) + np.trace(ca + cb - 2 * eig_sqrt(ra @ cb @ ra)))


class TestGaussianFit:
    def test_degenerate(self):
        with pytest.raises(NotPositiveDefinite):
            fit_gaussian(np.ones((100, 4)))

    def test_standard_normal(self):
        x = np.random.default_rng(0).standard_normal((100_000, 4))
        ref = fit_gaussian(x)
        assert np.all(np.abs(ref.mean) < 0.02)
        assert np.all(np.abs(ref.covariance - np.eye(4)) < 0.05)

    def test_translation(self):
        x = np.random.default_rng(1).standard_normal((500, 4))
        c = np.array([1.0, -2.0, 3.0, 0.5])
        a, b = fit_gaussian(x), fit_gaussian(x + c)
        np.testing.assert_allclose(b.mean, a.mean + c, atol=1e-12)
        np.testing.assert_allclose(b.covariance, a.covariance, atol=1e-12)


class TestMahalanobis:
    def test_at_mean(self):
        ref = fit_gaussian(np.random.default_rng(0).standard_normal((100, 4)))
        assert mahalanobis2(ref.mean[None, :], ref) == 0.0

    def test_self_reference(self):
        x = np.random.default_rng(2).multivariate_normal(np.zeros(4), np.diag([1, 2, 3, 4]), 100_000)
        assert abs(mahalanobis2(x, fit_gaussian(x)) - 4.0) < 0.05

    def test_naive_recombinations(self, small_dataset):
        from recomblab.recombine import Reparam
        from recomblab.synthtrain import recombined_eval_set

        x = recombined_eval_set(small_dataset, Reparam(np.eye(6)), 0, 5000)
        assert mahalanobis2(x, fit_gaussian(small_dataset.observations)) > 6.0

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_affine_invariance(self, seed):
        rng = np.random.default_rng(seed)
        ref_x = rng.standard_normal((300, 4)) @ rng.standard_normal((4, 4))
        x = rng.standard_normal((50, 4))
        A = random_orthogonal(seed, 4) * rng.uniform(0.5, 2.0, 4)
        b = rng.standard_normal(4)
        m1 = mahalanobis2(x, fit_gaussian(ref_x))
        m2 = mahalanobis2(x @ A.T + b, fit_gaussian(ref_x @ A.T + b))
        assert m2 == pytest.approx(m1, rel=1e-8)


class TestMCC:
    def test_identity(self, small_dataset):
        assert mcc(small_dataset.factors, small_dataset.factors) == pytest.approx(1.0)

    def test_permutation_and_signs(self, small_dataset):
        s = small_dataset.factors
        perm = [3, 0, 5, 1, 4, 2]
        signs = np.array([1, -1, -1, 1, -1, 1])
        assert mcc(s[:, perm] * signs, s) == pytest.approx(1.0)

    def test_monotone_transform(self, small_dataset):
        z = small_dataset.entangled
        assert mcc(np.tanh(z) + z ** 3, small_dataset.factors) == pytest.approx(mcc(z, small_dataset.factors), abs=1e-12)

    def test_raw_entangled(self, raw_datasets):
        vals = [mcc(d.entangled, d.factors) for d in raw_datasets]
        assert abs(np.mean(vals) - 0.60) <= 0.08


class TestMIG:
    def test_independent(self, small_dataset):
        rng = np.random.default_rng(0)
        s = make_dataset(0, 20000).factors
        shuffled = s[rng.permutation(len(s))]
        assert mig(rng.standard_normal((len(s), 6)), shuffled) <= 0.02

    def test_copy_plus_noise(self):
        s = make_dataset(1, 20000).factors
        lat = np.hstack([s, np.random.default_rng(1).standard_normal((len(s), 1))])
        assert mig(lat, s) >= 0.5

    def test_raw_entangled(self, raw_datasets):
        vals = [mig(d.entangled, d.factors) for d in raw_datasets]
        assert abs(np.mean(vals) - 0.06) <= 0.04

    def test_permutation_invariance(self, small_dataset):
        z = small_dataset.entangled
        a = mig(z, small_dataset.factors, n_eval=1000)
        b = mig(z[:, [5, 2, 0, 4, 1, 3]], small_dataset.factors, n_eval=1000)
        assert a == pytest.approx(b, abs=1e-12)


class TestTC:
    def test_independent(self):
        x = np.random.default_rng(0).standard_normal((100_000, 4)) * [1, 2, 3, 4]
        assert abs(gaussian_tc(x)) < 0.01

    def test_correlated_pair(self):
        x = np.random.default_rng(1).multivariate_normal([0, 0], [[1, 0.8], [0.8, 1]], 100_000)
        assert gaussian_tc(x) == pytest.approx(-0.5 * np.log(1 - 0.64), abs=0.02)

    def test_raw_entangled(self, raw_datasets):
        vals = [gaussian_tc(d.entangled) for d in raw_datasets]
        assert abs(np.mean(vals) - 1.09) <= 0.3

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((50, 5)) @ rng.standard_normal((5, 5))
        assert gaussian_tc(x) >= -1e-9


class TestBlockCorr:
    def test_independent_blocks(self):
        x = np.random.default_rng(0).standard_normal((100_000, 6))
        assert block_norm_corr(x) <= 0.02

    def test_duplicated_block(self):
        x = np.random.default_rng(1).standard_normal((1000, 4))
        assert block_norm_corr(np.hstack([x[:, :2], x[:, :2]]), (2, 2)) == pytest.approx(1.0)

    @pytest.mark.xfail(strict=True, reason=(
        "fixed factor parameters give raw block-norm correlation near 0.32 for this mixing "
        "matrix and near 0.29 on average over mixing matrices, outside 0.21 +/- 0.05"))
    def test_raw_entangled(self, raw_datasets):
        vals = [block_norm_corr(d.entangled) for d in raw_datasets]
        assert abs(np.mean(vals) - 0.21) <= 0.05


class TestFrechet:
    def test_same_batch(self):
        x = np.random.default_rng(0).standard_normal((500, 4))
        assert frechet_gaussian(x, x) < 1e-8

    def test_shift(self):
        x = np.random.default_rng(1).standard_normal((500, 4))
        d = np.array([0.5, -1.0, 2.0, 0.1])
        assert frechet_gaussian(x, x + d) == pytest.approx(d @ d, abs=1e-6)

    def test_eigen_oracle_and_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            la, lb = rng.standard_normal((2, 4, 4))
            ca, cb = la @ la.T + 0.1 * np.eye(4), lb @ lb.T + 0.1 * np.eye(4)
            ma, mb = rng.standard_normal((2, 4))
            f = frechet_from_moments(ma, ca, mb, cb)
            assert f == pytest.approx(frechet_oracle(ma, ca, mb, cb), abs=1e-6)
            assert f == pytest.approx(frechet_from_moments(mb, cb, ma, ca), abs=1e-8)


class TestReport:
    def test_factors_against_themselves(self, small_dataset):
        s = small_dataset.factors
        ref = fit_gaussian(small_dataset.observations)
        r = full_report(s, s, small_dataset.observations, ref, seed=0)
        assert r.mcc == pytest.approx(1.0)
        assert r.block_corr < 0.1
        assert r.frechet < 1e-8

    def test_deterministic_and_serialization(self, small_dataset):
        ref = fit_gaussian(small_dataset.observations)
        args = (small_dataset.entangled, small_dataset.factors, small_dataset.observations, ref)
        a, b = full_report(*args, seed=3), full_report(*args, seed=3)
        assert a == b and a.to_json() == b.to_json()
        d = json.loads(a.to_json())
        assert d["tc_convention"] == TC_CONVENTION
        header, row = a.to_csv().splitlines()
        assert header.split(",") == list(MetricsReport.CSV_COLUMNS)
        assert float(row.split(",")[0]) == a.mahalanobis2_mean
