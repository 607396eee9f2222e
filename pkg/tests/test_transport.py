"""Unit tests for exact optimal transport and the budgeted linear oracle."""

import math

import numpy as np
import pytest

from oracles import constrained_oracle_by_enumeration, transport_value_by_vertex_enumeration
from robust_entropy.core import GroundCost, InfeasibleError, JointDistribution
from robust_entropy.transport import (
    DualPotentials,
    constrained_linear_oracle,
    verify_duality,
    wasserstein_distance,
)


def joint_from_ints(ints) -> JointDistribution:
    arr = np.asarray(ints, dtype=float)
    return JointDistribution.from_mass(arr / arr.sum())


def random_joint(rng, nx, ny) -> JointDistribution:
    ints = rng.integers(1, 12, (nx, ny))
    return joint_from_ints(ints)


class TestWassersteinDistance:
    def test_identical_distributions(self):
        rng = np.random.default_rng(0)
        mu = random_joint(rng, 3, 2)
        cost = GroundCost.absolute_difference(3, 2, label_preserving=False)
        value, coupling, duals = wasserstein_distance(mu, mu, cost)
        assert value == pytest.approx(0.0, abs=1e-12)
        off_diag = coupling.plan.copy()
        np.fill_diagonal(off_diag, 0.0)
        assert np.all(off_diag[off_diag > 0.0] == 0.0)
        assert verify_duality(coupling, duals, cost) <= 1e-8

    def test_point_mass_to_point_mass(self):
        mass_a = np.zeros((3, 1))
        mass_a[0, 0] = 1.0
        mass_b = np.zeros((3, 1))
        mass_b[2, 0] = 1.0
        cost = GroundCost.absolute_difference(3, 1, label_preserving=True)
        value, _, _ = wasserstein_distance(
            JointDistribution(3, 1, mass_a), JointDistribution(3, 1, mass_b), cost
        )
        assert value == pytest.approx(2.0, abs=1e-12)

    def test_split_mass_to_center(self):
        # Mass (1/2, 1/2) at x in {0, 2} versus all mass at x=1, one label.
        mass_a = np.array([[0.5], [0.0], [0.5]])
        mass_b = np.array([[0.0], [1.0], [0.0]])
        cost = GroundCost.absolute_difference(3, 1, label_preserving=True)
        value, coupling, duals = wasserstein_distance(
            JointDistribution(3, 1, mass_a), JointDistribution(3, 1, mass_b), cost
        )
        # Unique feasible plan moves each half a distance of 1.
        assert value == pytest.approx(1.0, abs=1e-12)
        assert verify_duality(coupling, duals, cost) <= 1e-8

    def test_label_preserving_mismatch_is_infeasible(self):
        mu = joint_from_ints([[3, 1], [1, 3]])
        nu = joint_from_ints([[1, 3], [1, 1]])
        cost = GroundCost.absolute_difference(2, 2, label_preserving=True)
        with pytest.raises(InfeasibleError):
            wasserstein_distance(mu, nu, cost)

    def test_matches_vertex_enumeration(self):
        rng = np.random.default_rng(7)
        cost = GroundCost.absolute_difference(2, 2, label_preserving=False)
        for _ in range(25):
            a_int = rng.integers(1, 9, 4)
            b_int = rng.integers(1, 9, 4)
            total = int(a_int.sum() * b_int.sum())
            mu = JointDistribution(2, 2, (a_int * b_int.sum() / total).reshape(2, 2))
            nu = JointDistribution(2, 2, (b_int * a_int.sum() / total).reshape(2, 2))
            value, coupling, duals = wasserstein_distance(mu, nu, cost)
            ref = (
                transport_value_by_vertex_enumeration(
                    a_int * b_int.sum(), b_int * a_int.sum(), cost.matrix
                )
                / total
            )
            assert value == pytest.approx(ref, abs=1e-10)
            assert verify_duality(coupling, duals, cost) <= 1e-8

    def test_coupling_marginals_are_exact(self):
        rng = np.random.default_rng(8)
        cost = GroundCost.squared_difference(3, 2, label_preserving=False)
        mu = random_joint(rng, 3, 2)
        nu = random_joint(rng, 3, 2)
        _, coupling, _ = wasserstein_distance(mu, nu, cost)
        assert np.allclose(coupling.row_sums(), mu.flat(), atol=1e-10)
        assert np.allclose(coupling.col_sums(), nu.flat(), atol=1e-10)


class TestMetricAxioms:
    def test_metric_properties_on_random_triples(self):
        rng = np.random.default_rng(21)
        cost = GroundCost.absolute_difference(3, 2, label_preserving=False)
        for _ in range(200):
            p = random_joint(rng, 3, 2)
            q = random_joint(rng, 3, 2)
            r = random_joint(rng, 3, 2)
            w_pp, _, _ = wasserstein_distance(p, p, cost)
            w_pq, _, _ = wasserstein_distance(p, q, cost)
            w_qp, _, _ = wasserstein_distance(q, p, cost)
            w_qr, _, _ = wasserstein_distance(q, r, cost)
            w_pr, _, _ = wasserstein_distance(p, r, cost)
            assert abs(w_pp) <= 1e-12
            assert w_pq == pytest.approx(w_qp, abs=1e-9)
            assert w_pr <= w_pq + w_qr + 1e-8


class TestVerifyDuality:
    def test_gauge_invariance(self):
        rng = np.random.default_rng(5)
        cost = GroundCost.absolute_difference(2, 3, label_preserving=False)
        mu = random_joint(rng, 2, 3)
        nu = random_joint(rng, 2, 3)
        _, coupling, duals = wasserstein_distance(mu, nu, cost)
        base_gap = verify_duality(coupling, duals, cost)
        shifted = DualPotentials(duals.phi + 2.5, duals.psi - 2.5, duals.degenerate)
        assert verify_duality(coupling, shifted, cost) == pytest.approx(base_gap, abs=1e-12)

    def test_corrupted_potential_is_detected(self):
        rng = np.random.default_rng(6)
        cost = GroundCost.absolute_difference(2, 3, label_preserving=False)
        mu = random_joint(rng, 2, 3)
        nu = random_joint(rng, 2, 3)
        _, coupling, duals = wasserstein_distance(mu, nu, cost)
        support_col = int(np.nonzero(coupling.col_sums() > 0)[0][0])
        psi = duals.psi.copy()
        psi[support_col] += 1.0
        assert verify_duality(coupling, DualPotentials(duals.phi, psi), cost) >= 1.0 - 1e-8


def clamped_log_gain(rule_cond, delta=1e-12):
    return -np.log(np.maximum(rule_cond, delta))


class TestConstrainedLinearOracle:
    def toy_instance(self):
        mass = np.zeros((5, 5))
        for i in (0, 2, 4):
            mass[i, i] = 1.0 / 3.0
        mu = JointDistribution(5, 5, mass)
        cost = GroundCost.absolute_difference(5, 5, label_preserving=True)
        return mu, cost

    def test_slack_budget_gives_unconstrained_argmax(self):
        rng = np.random.default_rng(31)
        mu = random_joint(rng, 2, 2)
        cost = GroundCost.absolute_difference(2, 2, label_preserving=False)
        gain = rng.random((2, 2))
        res = constrained_linear_oracle(mu, cost, epsilon=10.0, gain=gain)
        assert res.multiplier == 0.0
        expected = float(mu.flat().sum() * gain.max())
        assert res.objective == pytest.approx(expected, abs=1e-12)

    def test_zero_budget_gives_identity(self):
        rng = np.random.default_rng(32)
        mu = random_joint(rng, 3, 2)
        cost = GroundCost.absolute_difference(3, 2, label_preserving=True)
        gain = rng.random((3, 2))
        res = constrained_linear_oracle(mu, cost, epsilon=0.0, gain=gain)
        assert res.achieved_distortion == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(np.diag(res.coupling.plan), mu.flat(), atol=1e-12)
        assert res.objective == pytest.approx(float(mu.flat() @ gain.reshape(-1)), abs=1e-12)

    def test_toy_attack_reaches_clamp_bound(self):
        mu, cost = self.toy_instance()
        # Gain of the clean posterior rule with zero mass off-support, so the
        # clamp fires at every off-support observation point.
        rule = np.zeros((5, 5))
        for i in (0, 2, 4):
            rule[i, i] = 1.0
        gain = clamped_log_gain(rule)
        res = constrained_linear_oracle(mu, cost, epsilon=1.0, gain=gain)
        clamp_bound = -math.log(1e-12)
        # Every source moves distance one onto an off-support point.
        assert res.objective == pytest.approx(clamp_bound, rel=1e-9)
        assert res.achieved_distortion == pytest.approx(1.0, abs=1e-9)
        support = res.coupling.plan > 1e-12
        assert np.all(cost.matrix[support] <= 1.0 + 1e-12)
        ref = constrained_oracle_by_enumeration(mu.flat(), cost.matrix, 1.0, gain.reshape(-1))
        assert res.objective == pytest.approx(ref, rel=1e-9)

    def test_matches_enumeration_on_small_instances(self):
        rng = np.random.default_rng(33)
        for trial in range(40):
            mu = random_joint(rng, 3, 2)
            lp = bool(trial % 2)
            cost = GroundCost.absolute_difference(3, 2, label_preserving=lp)
            gain = rng.normal(size=(3, 2))
            epsilon = float(rng.choice([0.05, 0.3, 0.8, 1.5]))
            res = constrained_linear_oracle(mu, cost, epsilon, gain)
            ref = constrained_oracle_by_enumeration(
                mu.flat(), cost.matrix, epsilon, gain.reshape(-1)
            )
            assert res.objective == pytest.approx(ref, abs=1e-6)
            assert res.achieved_distortion <= epsilon + 1e-9
            assert np.allclose(res.coupling.row_sums(), mu.flat(), atol=1e-10)
            slack = res.multiplier * (epsilon - res.achieved_distortion)
            assert slack <= 1e-8 * (1.0 + abs(res.objective))

    def test_objective_monotone_in_budget(self):
        rng = np.random.default_rng(34)
        mu = random_joint(rng, 4, 2)
        cost = GroundCost.absolute_difference(4, 2, label_preserving=True)
        gain = rng.normal(size=(4, 2))
        values = [
            constrained_linear_oracle(mu, cost, eps, gain).objective
            for eps in (0.0, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0)
        ]
        assert all(b >= a - 1e-10 for a, b in zip(values, values[1:]))

    def test_at_most_one_fractional_row_beyond_ties(self):
        rng = np.random.default_rng(35)
        for _ in range(25):
            mu = random_joint(rng, 3, 2)
            cost = GroundCost.absolute_difference(3, 2, label_preserving=True)
            gain = rng.normal(size=(3, 2))
            res = constrained_linear_oracle(mu, cost, 0.35, gain)
            score = gain.reshape(-1)[None, :] - res.multiplier * cost.matrix
            fractional = 0
            for a in range(res.coupling.source_size):
                row = res.coupling.plan[a]
                targets = np.nonzero(row > 1e-12)[0]
                if targets.size < 2:
                    continue
                spread = score[a, targets].max() - score[a, targets].min()
                if spread > 1e-7 * (1.0 + abs(score[a, targets].max())):
                    fractional += 1
            assert fractional <= 1
