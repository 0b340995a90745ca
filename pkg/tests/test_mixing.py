import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softlabel.divergence import kl
from softlabel.exceptions import DegenerateSupervisionError, InfeasibleLambdaError
from softlabel.mixing import bias, brute_force_lambda, decompose, optimal_lambda, variance
from softlabel.simplex import affine_combine, dirac, lambda_feasible_range, restrict_exclude
from strategies import mixing_instances

P_STAR = [0.7, 0.2, 0.1]
P_A = [0.0, 0.5, 0.5]


def _direct_kl(p, q):
    # plain summation, skipping zero-mass terms of p
    return sum(pi * math.log(pi / qi) for pi, qi in zip(p, q) if pi > 0)


class TestOptimalLambda:
    def test_examples(self):
        assert optimal_lambda([1, 0, 0], 0, P_A) == 1.0
        assert optimal_lambda(P_STAR, 0, P_A) == pytest.approx(0.7, abs=1e-15)
        assert optimal_lambda([0.2, 0.5, 0.3], 0, [0.5, 0.25, 0.25]) == pytest.approx(-0.6, abs=1e-15)

    def test_examples_agree_with_grid_search(self):
        assert brute_force_lambda(P_STAR, 0, P_A, 1e-5) == pytest.approx(0.7, abs=1e-5)
        assert brute_force_lambda([0.2, 0.5, 0.3], 0, [0.5, 0.25, 0.25], 1e-5) == pytest.approx(-0.6, abs=1e-5)

    def test_degenerate_supervision(self):
        with pytest.raises(DegenerateSupervisionError):
            optimal_lambda(P_STAR, 0, [1, 0, 0])

    @settings(max_examples=300, deadline=None)
    @given(mixing_instances())
    def test_aligns_hard_class_and_is_feasible(self, inst):
        p_star, hard, p_a = inst
        lam = optimal_lambda(p_star, hard, p_a)
        assert lam in lambda_feasible_range(hard, p_a)
        assert abs(affine_combine(hard, p_a, lam)[hard] - p_star[hard]) <= 1e-12

    @settings(max_examples=100, deadline=None)
    @given(mixing_instances(), st.integers(0, 2**32 - 1))
    def test_no_feasible_lambda_does_better(self, inst, seed):
        p_star, hard, p_a = inst
        best = kl(p_star, affine_combine(hard, p_a, optimal_lambda(p_star, hard, p_a)))
        iv = lambda_feasible_range(hard, p_a)
        for lam in np.random.default_rng(seed).uniform(iv.lo, iv.hi, 1000):
            assert best <= kl(p_star, affine_combine(hard, p_a, lam)) + 1e-12


class TestBruteForce:
    def test_trivial_cases(self):
        assert brute_force_lambda(dirac(1, 3), 1, [0.2, 0.3, 0.5]) == 1.0
        assert brute_force_lambda(P_STAR, 0, [1, 0, 0]) == 1.0

    def test_bad_step(self):
        with pytest.raises(ValueError):
            brute_force_lambda(P_STAR, 0, P_A, 0.0)

    def test_wide_interval_uses_refinement(self):
        # interval about 1e6 wide, far beyond a single enumerated grid
        p_a = [0.999999, 1e-6]
        p_star = [0.3, 0.7]
        assert brute_force_lambda(p_star, 0, p_a) == pytest.approx(optimal_lambda(p_star, 0, p_a), abs=1e-5)


class TestBiasVariance:
    def test_bias_examples(self):
        assert bias(P_STAR, 0, restrict_exclude(P_STAR, 0)) == pytest.approx(0.0, abs=1e-15)
        expected = 0.3 * _direct_kl([2 / 3, 1 / 3], [0.5, 0.5])
        assert bias(P_STAR, 0, P_A) == pytest.approx(expected, abs=1e-15)
        assert round(expected, 6) == 0.016990
        assert bias(P_STAR, 0, [0, 1, 0]) == math.inf
        assert bias(dirac(0, 3), 0, P_A) == 0.0

    def test_variance_examples(self):
        assert variance(P_STAR, 0, P_STAR) == 0.0
        assert variance(P_STAR, 0, [0.9, 0.05, 0.05]) == pytest.approx(0.153664, abs=5e-7)
        assert variance([1, 0, 0], 0, [0.9, 0.05, 0.05]) == pytest.approx(math.log(1 / 0.9), abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(mixing_instances())
    def test_variance_shrinks_toward_the_optimum(self, inst):
        p_star, hard, p_a = inst
        lam_star = optimal_lambda(p_star, hard, p_a)
        iv = lambda_feasible_range(hard, p_a)
        for end in (iv.lo, iv.hi):
            lams = np.linspace(end, lam_star, 20)[1:]
            vals = [variance(p_star, hard, affine_combine(hard, p_a, lam)) for lam in lams]
            assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


class TestDecompose:
    def test_worked_example(self):
        rep = decompose(P_STAR, 0, P_A, 0.9)
        assert rep.kl_total == pytest.approx(_direct_kl(P_STAR, [0.9, 0.05, 0.05]), abs=1e-15)
        assert rep.kl_total == pytest.approx(0.170654, abs=1e-6)
        assert rep.bias == pytest.approx(0.016990, abs=1e-6)
        assert rep.variance == pytest.approx(0.153664, abs=1e-6)
        assert rep.lambda_star == pytest.approx(0.7) and rep.lambda_used == 0.9
        assert abs(rep.residual) <= 1e-12

    def test_at_optimum_only_bias_remains(self):
        rep = decompose(P_STAR, 0, P_A, 0.7)
        assert rep.variance <= 1e-12
        assert rep.kl_total == pytest.approx(rep.bias, abs=1e-12)

    def test_perfect_hard_label(self):
        rep = decompose(dirac(0, 3), 0, P_A, 1.0)
        assert (rep.kl_total, rep.bias, rep.variance) == (0.0, 0.0, 0.0)

    def test_infeasible_lambda_propagates(self):
        with pytest.raises(InfeasibleLambdaError):
            decompose(P_STAR, 0, P_A, -0.5)

    @settings(max_examples=500, deadline=None)
    @given(mixing_instances(), st.floats(0.001, 0.999))
    def test_identity_and_bias_independence(self, inst, u):
        p_star, hard, p_a = inst
        iv = lambda_feasible_range(hard, p_a)
        rep = decompose(p_star, hard, p_a, iv.lo + u * (iv.hi - iv.lo))
        assert abs(rep.kl_total - rep.bias - rep.variance) <= 1e-9
        other = decompose(p_star, hard, p_a, iv.lo + 0.5 * (iv.hi - iv.lo))
        assert round(rep.bias, 12) == round(other.bias, 12)
