import itertools

import numpy as np
import pytest

from coalwalk import (
    ExponentialEnvelope,
    RateGenerator,
    SurvivalCurve,
    correlation_report_for_targets,
    correlation_xi,
    envelope_fit,
    envelope_w1_bound,
    expected_hitting_times,
    mean_hitting_time,
    meeting_diagonal,
    meeting_mean,
    pair_diagonal,
    pair_meeting_bound_check,
    product_chain,
    quantile,
    stationary_distribution,
)
from coalwalk.hitting import TargetSet, default_envelope_grid, union_target
from conftest import k_walk


def pair_chain_and_diag(n):
    chain = k_walk(n)
    prod = product_chain(chain, 2)
    return chain, prod, pair_diagonal(prod, n, 2, 0, 1)


class TestMeanHitting:
    def test_k2_stationary_quarter(self):
        # half the stationary mass sits on the diagonal, the rest waits Exp(2)
        _, prod, diag = pair_chain_and_diag(2)
        start = np.full(4, 0.25)
        assert mean_hitting_time(prod, diag, start) == pytest.approx(0.25, abs=1e-12)

    def test_start_inside_target_is_zero(self):
        _, prod, diag = pair_chain_and_diag(3)
        start = np.zeros(9)
        start[0] = 1.0  # (0, 0) is on the diagonal
        assert mean_hitting_time(prod, diag, start) == 0.0

    @pytest.mark.parametrize("n", [3, 4, 10])
    def test_kn_meeting_formula(self, n):
        # off-diagonal pairs meet at rate 2/(n-1); the diagonal atom scales it
        expected = (1 - 1 / n) * (n - 1) / 2
        assert meeting_mean(k_walk(n)) == pytest.approx(expected, abs=1e-8)

    def test_k2_meeting_mean(self):
        assert meeting_mean(k_walk(2)) == pytest.approx(0.25, abs=1e-12)

    def test_conditioned_meeting_mean(self):
        # conditioning away the diagonal atom recovers (n-1)/2 on K_n
        for n in (2, 5):
            m = meeting_mean(k_walk(n), conditioned_off_diagonal=True)
            assert m == pytest.approx((n - 1) / 2, abs=1e-9)

    def test_solution_nonnegative_with_residual(self, chain_matrix):
        for chain in chain_matrix.values():
            target = TargetSet.from_states(chain, [0])
            u = expected_hitting_times(chain, target)
            assert u.min() >= 0.0
            comp = np.nonzero(u > 0)[0]
            Q = chain.generator_matrix()
            res = np.abs((Q @ u)[comp] + 1.0).max()
            assert res <= 1e-8


class TestSurvival:
    def test_k2_distinct_pair_is_exp2(self):
        _, prod, diag = pair_chain_and_diag(2)
        start = np.zeros(4)
        start[1] = 1.0
        curve = SurvivalCurve(prod, diag, start)
        ts = np.array([0.0, 0.2, 1.0, 3.0])
        np.testing.assert_allclose(curve(ts), np.exp(-2 * ts), atol=1e-11)

    def test_two_state_exit(self):
        chain = RateGenerator(2, [(0, 1, 1.0), (1, 0, 1.0)])
        curve = SurvivalCurve(chain, TargetSet.from_states(chain, [1]), [1.0, 0.0])
        for t in (0.0, 0.5, 2.0):
            assert curve(t) == pytest.approx(np.exp(-t), abs=1e-11)

    def test_initial_value_excludes_target_mass(self):
        _, prod, diag = pair_chain_and_diag(4)
        start = np.full(16, 1 / 16)
        curve = SurvivalCurve(prod, diag, start)
        assert curve(0.0) == pytest.approx(1 - 4 / 16, abs=1e-12)

    def test_monotone(self, chain_matrix):
        for chain in chain_matrix.values():
            curve = SurvivalCurve(chain, TargetSet.from_states(chain, [0]),
                                  stationary_distribution(chain))
            vals = curve(np.linspace(0, 3, 40))
            assert np.all(np.diff(vals) <= 1e-12)

    def test_integral_matches_mean(self, chain_matrix):
        for chain in chain_matrix.values():
            pi = stationary_distribution(chain)
            curve = SurvivalCurve(chain, TargetSet.from_states(chain, [1]), pi)
            assert curve.integral() == pytest.approx(curve.mean, rel=1e-6)


class TestQuantile:
    def test_exponential_closed_form(self):
        _, prod, diag = pair_chain_and_diag(2)
        start = np.zeros(4)
        start[2] = 1.0
        curve = SurvivalCurve(prod, diag, start)  # Exp(2), mean 1/2
        for eps in (0.05, 0.1, 0.4):
            q = quantile(curve, eps)
            assert q.time == pytest.approx(-0.5 * np.log1p(-eps), rel=1e-9)
            hand_dev = abs(eps / (-np.log1p(-eps)) - 1)
            assert q.mean_quantile_deviation == pytest.approx(hand_dev, rel=1e-7)

    def test_round_trip_cdf(self, chain_matrix):
        for chain in chain_matrix.values():
            pi = stationary_distribution(chain)
            curve = SurvivalCurve(chain, TargetSet.from_states(chain, [0]), pi)
            eps = curve.cdf(0.0) + 0.3 * curve(0.0)  # safely above the atom
            q = quantile(curve, eps)
            assert abs(curve.cdf(q.time) - eps) <= 1e-8

    def test_epsilon_below_atom_guarded(self):
        _, prod, diag = pair_chain_and_diag(2)
        curve = SurvivalCurve(prod, diag, np.full(4, 0.25))  # atom 1/2 at zero
        with pytest.raises(ValueError):
            quantile(curve, 0.3)

    def test_small_epsilon_deviation_shrinks(self):
        _, prod, diag = pair_chain_and_diag(2)
        start = np.zeros(4)
        start[1] = 1.0
        curve = SurvivalCurve(prod, diag, start)
        devs = [quantile(curve, e).mean_quantile_deviation for e in (0.2, 0.05, 0.01)]
        assert devs[0] > devs[1] > devs[2]


class TestEnvelope:
    def test_exact_exponential_zero_slack(self):
        fit = envelope_fit(lambda t: np.exp(-np.asarray(t) / 2.0), 2.0)
        assert fit.applicable
        assert fit.alpha <= 1e-8
        assert fit.beta <= 1e-5

    def test_scale_mismatch_absorbed_by_beta(self):
        # survival of Exp(1.1 m) against scale m needs beta ~= 0.1, alpha 0
        m = 2.0
        fit = envelope_fit(lambda t: np.exp(-np.asarray(t) / (1.1 * m)), m)
        assert fit.alpha <= 1e-6
        assert fit.beta == pytest.approx(0.1, abs=1e-3)

    def test_k2_atom_needs_alpha_half(self):
        # S(t) = exp(-2t)/2 against scale 1/2: the time-zero atom forces
        # alpha = 1/2 and the tail rate already matches, so beta = 0
        _, prod, diag = pair_chain_and_diag(2)
        curve = SurvivalCurve(prod, diag, np.full(4, 0.25))
        fit = envelope_fit(curve, 0.5)
        assert fit.alpha == pytest.approx(0.5, abs=1e-9)
        assert fit.beta <= 1e-5

    def test_membership_verified_on_grid(self):
        _, prod, diag = pair_chain_and_diag(5)
        curve = SurvivalCurve(prod, diag, np.full(25, 1 / 25))
        fit = envelope_fit(curve, curve.mean)
        assert fit.worst_upper_violation <= 1e-9
        assert fit.worst_lower_violation <= 1e-9

    def test_degenerate_start_inside(self):
        _, prod, diag = pair_chain_and_diag(3)
        start = np.zeros(9)
        start[diag.states] = 1.0 / diag.states.size
        curve = SurvivalCurve(prod, diag, start)
        fit = envelope_fit(curve, 1.0)
        assert not fit.applicable
        assert fit.early_hit_probability == 1.0

    def test_early_hit_probability_from_threshold(self):
        _, prod, diag = pair_chain_and_diag(2)
        start = np.zeros(4)
        start[1] = 1.0
        curve = SurvivalCurve(prod, diag, start)
        fit = envelope_fit(curve, 0.5, r_threshold=0.25)
        assert fit.early_hit_probability == pytest.approx(1 - np.exp(-0.5), abs=1e-10)

    @pytest.mark.parametrize(
        "m, alpha, beta, expected",
        [(1.0, 0.0, 0.0, 0.0), (2.0, 0.1, 0.05, 0.6), (0.25, 0.5, 0.0, 0.25)],
    )
    def test_w1_bound_formula(self, m, alpha, beta, expected):
        assert envelope_w1_bound(ExponentialEnvelope(m, alpha, beta)) == pytest.approx(expected)

    def test_grid_covers_head_and_tail(self):
        grid = default_envelope_grid(2.0)
        assert grid[0] == 0.0
        assert grid[1] == pytest.approx(2e-3)
        assert grid[-1] == pytest.approx(20.0)
        assert len(grid) == 201


class TestPairMeetingBound:
    def test_horizon_zero_is_overlap_mass(self):
        chain = k_walk(4)
        lam = np.array([1.0, 0, 0, 0])
        rep = pair_meeting_bound_check(chain, lam, 0.0)
        assert rep.exact_probability == pytest.approx(0.25, abs=1e-12)
        assert rep.bound == pytest.approx(0.25)
        assert rep.satisfied

    def test_k4_delta_start(self):
        chain = k_walk(4)
        lam = np.array([1.0, 0, 0, 0])
        rep = pair_meeting_bound_check(chain, lam, 1.0)
        assert rep.bound == pytest.approx(0.75)
        assert rep.exact_probability <= rep.bound
        assert rep.satisfied

    def test_two_state_asymmetric(self, two_state_asymmetric):
        pi = stationary_distribution(two_state_asymmetric)
        rep = pair_meeting_bound_check(two_state_asymmetric, pi, 0.5)
        expected_bound = (1 + 2 * 0.5 * 2.0) * pi.max()
        assert rep.bound == pytest.approx(expected_bound)
        assert rep.satisfied

    def test_never_violated_across_matrix(self, chain_matrix):
        rng = np.random.default_rng(77)
        for chain in chain_matrix.values():
            for T in (0.0, 0.3, 2.0):
                lam = rng.dirichlet(np.ones(chain.n))
                rep = pair_meeting_bound_check(chain, lam, T)
                assert rep.violation <= 1e-9

    def test_mc_estimate_consistent(self):
        chain = k_walk(3)
        lam = np.array([1.0, 0, 0])
        rep = pair_meeting_bound_check(chain, lam, 0.5, n_samples=2000, seed=42)
        assert rep.mc_estimate == pytest.approx(rep.exact_probability, abs=4 * rep.mc_se)


class TestCorrelation:
    def test_pair_means_equal_across_pairs(self):
        chain = k_walk(4)
        prod3 = product_chain(chain, 3)
        pi = stationary_distribution(chain)
        start3 = np.einsum("i,j,k->ijk", pi, pi, pi).ravel()
        means = [
            mean_hitting_time(prod3, pair_diagonal(prod3, 4, 3, i, j), start3)
            for i, j in itertools.combinations(range(3), 2)
        ]
        spread = (max(means) - min(means)) / means[0]
        assert spread <= 1e-10

    def test_transitive_product_bound_k4(self):
        rep = correlation_xi(k_walk(4), 3, 0.1)
        assert rep.mode == "exact"
        p = rep.marginals[0]
        assert rep.max_joint <= 2 * p * p + 1e-9

    def test_disjoint_pairs_factorize(self):
        rep = correlation_xi(k_walk(5), 4, 0.05)
        p = rep.marginals[0]
        for j in rep.joints:
            if j.overlap == "disjoint":
                assert j.probability == pytest.approx(p * p, abs=1e-12)

    def test_joints_below_marginals(self):
        rep = correlation_xi(k_walk(5), 3, 0.08)
        assert rep.joints_below_marginals()

    def test_independent_coordinates_xi_small(self):
        # three independent 2-state coordinates started off their targets;
        # the per-coordinate hitting times are independent Exp(1), so each
        # joint factorizes and the index stays O(epsilon)
        base = RateGenerator(2, [(0, 1, 1.0), (1, 0, 1.0)])
        prod = product_chain(base, 3)
        coords = np.unravel_index(np.arange(8), (2, 2, 2))
        targets = [
            TargetSet.from_states(prod, np.nonzero(coords[i] == 1)[0], f"coord{i}")
            for i in range(3)
        ]
        start = np.zeros(8)
        start[0] = 1.0  # (0, 0, 0): no coordinate on its target
        eps = 0.1
        rep = correlation_report_for_targets(prod, targets, eps, start=start)
        assert rep.mean == pytest.approx(1.0, abs=1e-10)
        p = 1 - np.exp(-eps)
        for j in rep.joints:
            assert j.probability == pytest.approx(p * p, abs=1e-9)
        ell = 3
        assert rep.correlation_index <= 2 * eps * ell

    def test_mc_mode_matches_exact(self):
        chain = k_walk(4)
        exact = correlation_xi(chain, 3, 0.2)
        mc = correlation_xi(chain, 3, 0.2, state_budget=10, mc_samples=4000, seed=3)
        assert mc.mode == "mc"
        assert mc.mean == pytest.approx(exact.mean, rel=1e-9)
        for je, jm in zip(exact.joints, mc.joints):
            assert jm.probability == pytest.approx(je.probability, abs=5 * max(jm.se, 0.004))

    def test_union_target_requires_same_chain(self):
        chain = k_walk(3)
        other = k_walk(3)
        a = TargetSet.from_states(chain, [0])
        b = TargetSet.from_states(other, [1])
        with pytest.raises(ValueError):
            union_target(a, b)
