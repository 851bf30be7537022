import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recomblab.numerics import mi_from_joint
from recomblab.recombine import mix
from recomblab.theory import (
    CoverageFamily,
    DiscreteJoint,
    EnergySet,
    TheoryError,
    closure_complete,
    coverage_sim,
    coverage_variance,
    expected_coverage,
    inverted_u_demo,
    mask_alpha,
    mi_contraction,
    poe_check,
    projection_product,
    random_energy_set,
    random_joint,
    run_theory_checks,
)

GRID = np.linspace(-12, 12, 4001)


class TestPoE:
    def test_single_expert(self):
        es = EnergySet(GRID, [0.5 * GRID ** 2 + np.sin(GRID)], [1.0])
        assert poe_check(es) < 1e-12

    def test_two_gaussians_closed_form(self):
        m1, p1, m2, p2 = -1.0, 2.0, 1.5, 0.5
        es = EnergySet(GRID, [0.5 * p1 * (GRID - m1) ** 2, 0.5 * p2 * (GRID - m2) ** 2], [1.0, 1.0])
        assert poe_check(es) < 1e-10
        prec = p1 + p2
        mean = (p1 * m1 + p2 * m2) / prec
        closed = np.sqrt(prec / (2 * np.pi)) * np.exp(-0.5 * prec * (GRID - mean) ** 2)
        additive = np.exp(-(es.energies.sum(axis=0) - es.energies.sum(axis=0).min()))
        additive /= np.trapezoid(additive, GRID)
        assert np.max(np.abs(additive - closed)) < 1e-10

    def test_random_sets(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert poe_check(random_energy_set(rng, K=3)) < 1e-9

    def test_refinement_does_not_increase(self):
        # both discrepancies are pure rounding, so compare with a rounding allowance
        rng = np.random.default_rng(1)
        for _ in range(10):
            state = rng.bit_generator.state
            coarse = poe_check(random_energy_set(rng, n_grid=2001))
            rng.bit_generator.state = state
            fine = poe_check(random_energy_set(rng, n_grid=4001))
            assert fine <= coarse + 1e-15

    def test_validation(self):
        with pytest.raises(TheoryError):
            EnergySet(GRID, [GRID ** 2], [-1.0])
        with pytest.raises(TheoryError):
            EnergySet(GRID[::-1], [GRID ** 2], [1.0])


class TestClosure:
    def test_full_product_unchanged(self):
        full = set(itertools.product([0, 1], [2, 3], [4]))
        assert closure_complete(full) == frozenset(full)

    def test_two_codes(self):
        assert closure_complete([("a1", "b1"), ("a2", "b2")]) == {
            ("a1", "b1"), ("a1", "b2"), ("a2", "b1"), ("a2", "b2")}

    def test_matches_projection_product(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            codes = [tuple(int(v) for v in rng.integers(0, 4, 3)) for _ in range(int(rng.integers(1, 6)))]
            assert closure_complete(codes) == projection_product(codes)

    @given(st.lists(st.tuples(*[st.integers(0, 3)] * 3), min_size=1, max_size=5))
    @settings(max_examples=40, deadline=None)
    def test_closed_under_masks(self, codes):
        closed = closure_complete(codes)
        for a, b in itertools.product(closed, repeat=2):
            for S in itertools.product((0, 1), repeat=3):
                za, zb = np.repeat(a, 2), np.repeat(b, 2)
                assert tuple(mix(za, zb, S)[::2].astype(int)) in closed

    def test_ragged(self):
        with pytest.raises(TheoryError):
            closure_complete([(1, 2), (1, 2, 3)])


class TestMIContraction:
    def test_correlated_bits(self):
        lhs, bound = mi_contraction(DiscreteJoint(np.diag([0.5, 0.5])), 0.5)
        assert lhs == pytest.approx(0.13081, abs=1e-5)
        assert lhs == pytest.approx(mi_from_joint(np.array([[0.375, 0.125], [0.125, 0.375]])), abs=1e-15)
        assert bound == pytest.approx(0.5 * np.log(2), abs=1e-15)

    def test_endpoints(self):
        j = random_joint(np.random.default_rng(0))
        lhs, bound = mi_contraction(j, 1.0)
        assert abs(lhs - bound) <= 1e-12
        assert abs(mi_contraction(j, 0.0)[0]) <= 1e-15

    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_inequality(self, seed, alpha):
        lhs, bound = mi_contraction(random_joint(np.random.default_rng(seed)), alpha, tol=np.inf)
        assert lhs <= bound + 1e-12

    def test_invalid_joint(self):
        with pytest.raises(TheoryError):
            DiscreteJoint(np.array([[0.5, 0.4]]))
        with pytest.raises(TheoryError):
            mi_contraction(DiscreteJoint(np.eye(2) / 2), 1.5)


class TestMaskAlpha:
    def test_values(self):
        assert mask_alpha("iid-half", 5, 0, 3) == 0.5
        assert mask_alpha("proper", 2, 0, 1) == 0.0
        assert mask_alpha("proper", 3, 0, 2) == pytest.approx(1 / 3)

    def test_matches_sampling(self):
        from recomblab.recombine import sample_masks
        S = sample_masks(np.random.default_rng(0), 100_000, 3, "proper")
        assert np.mean(S[:, 0] == S[:, 1]) == pytest.approx(mask_alpha("proper", 3, 0, 1), abs=0.01)


class TestCoverage:
    def test_closed_forms(self):
        q = np.full(10, 0.1)
        assert expected_coverage(q, 1) == 1.0
        assert expected_coverage(q, 100) == pytest.approx(10 * (1 - 0.9 ** 100), abs=1e-12)
        assert expected_coverage(q, 100) == pytest.approx(9.99973, abs=1e-5)
        for n in (1, 5, 50):
            assert expected_coverage([0, 1.0, 0], n) == 1.0

    def test_sim_degenerate(self):
        assert coverage_sim([0, 1.0, 0], 20, 500, 0)[0] == 1.0
        assert coverage_sim(np.full(5, 0.2), 1, 500, 0)[0] == 1.0

    def test_sim_within_three_se(self):
        rng = np.random.default_rng(3)
        for i in range(20):
            q = rng.dirichlet(np.ones(int(rng.integers(2, 20))))
            q /= q.sum()
            n = int(rng.integers(1, 51))
            mean, _ = coverage_sim(q, n, 10_000, i)
            se = np.sqrt(coverage_variance(q, n) / 10_000)
            assert abs(mean - expected_coverage(q, n)) <= 3 * se + 1e-12

    def test_variance_against_simulation(self):
        q = np.array([0.5, 0.3, 0.15, 0.05])
        rng = np.random.default_rng(0)
        draws = rng.choice(4, size=(20_000, 6), p=q)
        counts = np.array([len(set(r)) for r in draws])
        assert counts.var() == pytest.approx(coverage_variance(q, 6), rel=0.05)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_monotone_and_bounded(self, seed):
        rng = np.random.default_rng(seed)
        B = int(rng.integers(1, 12))
        q = rng.dirichlet(np.ones(B))
        q /= q.sum()
        vals = [expected_coverage(q, n) for n in range(1, 40)]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
        assert all(v <= min(n, B) + 1e-12 for n, v in zip(range(1, 40), vals))


class TestInvertedU:
    def test_default_family(self):
        demo = inverted_u_demo()
        best = demo["argmax"]
        cov = demo["coverage"]
        assert demo["interior_max"] and 0 < best < len(cov) - 1
        assert cov[0] < cov[best] and cov[-1] < cov[best]

    def test_constant_family_flagged(self):
        demo = inverted_u_demo(lambda lam: np.full(4, 0.25))
        assert demo["flat"] and not demo["interior_max"]

    def test_family_normalized(self):
        fam = CoverageFamily()
        for lam in np.linspace(0, 4, 9):
            q = fam(lam)
            assert abs(q.sum() - 1) < 1e-12 and np.all(q >= 0)

    def test_edge_max_raises(self):
        with pytest.raises(TheoryError):
            # flattens as lambda grows, so coverage peaks at the last grid point
            inverted_u_demo(lambda lam: np.exp(-(5 - lam) * np.arange(4)) / np.exp(-(5 - lam) * np.arange(4)).sum())


class TestRunner:
    def test_all_pass_and_deterministic(self):
        kw = dict(n_joints=100, n_closure=50, n_poe=5, n_coverage=5, coverage_trials=2000)
        a, b = run_theory_checks(3, **kw), run_theory_checks(3, **kw)
        assert a.passed
        assert a.to_json() == b.to_json()
        assert set(json.loads(a.to_json())["checks"]) == {
            "mi_contraction", "closure", "poe", "coverage_mc", "coverage_n1", "inverted_u"}
