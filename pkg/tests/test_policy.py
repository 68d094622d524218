import math

import numpy as np
import pytest

from pgsosp.errors import ConfigError, PolicyDomainError
from pgsosp.policy import (
    ExampleOnePiecewise,
    PolicyParams,
    TabularSoftmax,
    estimate_regularity,
    make_family,
)
from pgsosp.util import derive_rng

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class TestSoftmaxProbs:
    def test_uniform_at_zero(self):
        fam = TabularSoftmax(2, 3)
        for s in range(2):
            assert fam.action_probs(np.zeros(6), s) == pytest.approx([1 / 3] * 3)

    def test_log3_logits(self):
        fam = TabularSoftmax(1, 2)
        probs = fam.action_probs(np.array([math.log(3.0), 0.0]), 0)
        assert probs == pytest.approx([0.75, 0.25], abs=1e-14)

    def test_normalized(self):
        fam = TabularSoftmax(2, 4)
        rng = derive_rng(0, 1)
        for _ in range(20):
            theta = rng.uniform(-5, 5, 8)
            for s in range(2):
                probs = fam.action_probs(theta, s)
                assert probs.min() >= 0.0
                assert abs(probs.sum() - 1.0) <= 1e-12

    def test_shift_invariance(self):
        fam = TabularSoftmax(2, 3)
        rng = derive_rng(0, 2)
        theta = rng.uniform(-2, 2, 6)
        shifted = theta.copy()
        shifted[0:3] += 7.5
        assert np.abs(fam.action_probs(theta, 0)
                      - fam.action_probs(shifted, 0)).max() <= 1e-12


class TestScores:
    def test_softmax_uniform_block(self):
        fam = TabularSoftmax(1, 2)
        g = fam.grad_log_prob(np.zeros(2), 0, 0)
        assert g == pytest.approx([0.5, -0.5], abs=1e-14)

    @pytest.mark.parametrize("seed", range(100))
    def test_score_identity(self, seed):
        rng = derive_rng(seed, 3)
        fam = TabularSoftmax(2, 3)
        theta = rng.uniform(-3, 3, 6)
        s = int(rng.integers(0, 2))
        probs = fam.action_probs(theta, s)
        total = sum(probs[a] * fam.grad_log_prob(theta, s, a) for a in range(3))
        assert np.abs(total).max() <= 1e-10

    def test_example1_score_at_half(self):
        fam = ExampleOnePiecewise()
        g = fam.grad_log_prob(np.array([0.5, 0.5]), 0, 0)
        assert g == pytest.approx([-1.0, 1.0], abs=1e-12)

    def test_zero_probability_action_rejected(self):
        fam = ExampleOnePiecewise()
        with pytest.raises(PolicyDomainError):
            fam.grad_log_prob(np.array([0.5, 0.5]), 0, 1)  # `left` is off in box

    def test_example1_score_identity(self):
        fam = ExampleOnePiecewise()
        rng = derive_rng(0, 4)
        for _ in range(50):
            theta = rng.uniform(-0.9, 0.9, 2)
            probs = fam.action_probs(theta, 0)
            total = np.zeros(2)
            for a in range(3):
                if probs[a] > 0:
                    total += probs[a] * fam.grad_log_prob(theta, 0, a)
            assert np.abs(total).max() <= 1e-10


class TestHessians:
    def test_softmax_uniform_block(self):
        fam = TabularSoftmax(1, 2)
        h = fam.hessian_log_prob(np.zeros(2), 0, 0)
        assert h == pytest.approx(np.array([[-0.25, 0.25], [0.25, -0.25]]), abs=1e-14)

    def test_single_action_zero(self):
        fam = TabularSoftmax(1, 1)
        assert np.array_equal(fam.hessian_log_prob(np.zeros(1), 0, 0),
                              np.zeros((1, 1)))

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_finite_differences(self, seed):
        # Central differences of the analytic score at step 1e-5.
        rng = derive_rng(seed, 5)
        if seed % 2 == 0:
            fam = TabularSoftmax(2, 2)
            theta = rng.uniform(-2, 2, 4)
            s = int(rng.integers(0, 2))
            probs = fam.action_probs(theta, s)
            a = int(rng.integers(0, 2))
        else:
            fam = ExampleOnePiecewise()
            theta = rng.uniform(0.05, 0.8, 2) if seed % 4 == 1 \
                else rng.uniform(-0.85, -0.05, 2)
            s = 0
            probs = fam.action_probs(theta, s)
            a = int(rng.choice(np.flatnonzero(probs > 0)))
        step = 1e-5
        h_exact = fam.hessian_log_prob(theta, s, a)
        assert np.abs(h_exact - h_exact.T).max() <= 1e-12
        p = theta.size
        h_fd = np.zeros((p, p))
        for j in range(p):
            bump = np.zeros(p)
            bump[j] = step
            h_fd[:, j] = (fam.grad_log_prob(theta + bump, s, a)
                          - fam.grad_log_prob(theta - bump, s, a)) / (2 * step)
        # Absolute tolerance scaled by the curvature magnitude: truncation
        # error of central differences grows with the higher derivatives.
        tol = 1e-6 * max(1.0, float(np.abs(h_exact).max()))
        assert np.abs(h_exact - h_fd).max() <= tol


class TestExampleOneFamily:
    def test_origin_probs(self):
        fam = ExampleOnePiecewise()
        probs = fam.action_probs(np.zeros(2), 0)
        assert probs[0] == pytest.approx(INV_SQRT_2PI, abs=1e-15)
        assert probs[1] == 0.0
        assert probs.sum() == pytest.approx(1.0, abs=1e-15)

    def test_absorbing_states_point_mass(self):
        fam = ExampleOnePiecewise()
        assert np.array_equal(fam.action_probs(np.zeros(2), 1), [1.0, 0.0, 0.0])
        assert np.array_equal(fam.action_probs(np.zeros(2), 2), [0.0, 1.0, 0.0])
        assert np.array_equal(fam.grad_log_prob(np.zeros(2), 1, 0), np.zeros(2))

    def test_boundary_uses_box_branch(self):
        fam = ExampleOnePiecewise()
        on_boundary = fam.action_probs(np.array([1.0, 1.0]), 0)
        assert on_boundary[0] == pytest.approx(INV_SQRT_2PI, abs=1e-15)
        just_outside = fam.action_probs(np.array([1.0 + 1e-9, 1.0]), 0)
        assert just_outside[0] == 0.0
        assert just_outside[1] > 0.0

    def test_domain_error_far_from_box(self):
        fam = ExampleOnePiecewise()
        with pytest.raises(PolicyDomainError, match="theta"):
            fam.action_probs(np.array([2.0, 1.5]), 0)

    def test_gaussian_branch_score(self):
        fam = ExampleOnePiecewise()
        theta = np.array([-0.5, 0.5])
        g = fam.grad_log_prob(theta, 0, 1)
        assert g == pytest.approx(theta, abs=1e-14)


class TestRegularity:
    def test_softmax_score_bound(self):
        fam = TabularSoftmax(1, 2)
        reg = estimate_regularity(fam, [(-2, 2), (-2, 2)], 9)
        assert 0.0 < reg.G <= 1.0 + 1e-12

    def test_single_action_all_zero(self):
        fam = TabularSoftmax(2, 1)
        reg = estimate_regularity(fam, [(-1, 1), (-1, 1)], 5)
        assert reg.G == 0.0 and reg.L == 0.0 and reg.U == 0.0

    def test_example1_prob_derivative_max(self):
        # max |d_i pi| on the unit box is 2/sqrt(2*pi), attained at the edge.
        fam = ExampleOnePiecewise()
        reg = estimate_regularity(fam, [(0, 1), (0, 1)], 21, estimate_w=False)
        assert reg.U == pytest.approx(2.0 * INV_SQRT_2PI, abs=1e-12)

    def test_w_estimated_when_requested(self):
        fam = TabularSoftmax(1, 2)
        reg = estimate_regularity(fam, [(-1, 1), (-1, 1)], 7)
        assert reg.W is not None and reg.W >= 0.0
        reg2 = estimate_regularity(fam, [(-1, 1), (-1, 1)], 7, estimate_w=False)
        assert reg2.W is None

    def test_empty_box_rejected(self):
        with pytest.raises(ConfigError):
            estimate_regularity(TabularSoftmax(1, 2), [(0, 1), (1, 0)], 5)


class TestPolicyParams:
    def test_dimension_check(self):
        with pytest.raises(ConfigError):
            PolicyParams(theta=np.zeros(3), family=TabularSoftmax(1, 2))

    def test_finite_check(self):
        with pytest.raises(ConfigError):
            PolicyParams(theta=np.array([np.nan, 0.0]),
                         family=TabularSoftmax(1, 2))

    def test_make_family(self):
        fam = make_family("tabular_softmax", 2, 3)
        assert fam.param_dim == 6
        assert make_family("example_one").param_dim == 2
        with pytest.raises(ConfigError):
            make_family("gaussian")
