import math

import numpy as np
from django.test import SimpleTestCase, override_settings

from fishery.bio_model import AgentRevenue, GrowthModel
from fishery.exceptions import BranchRootNotBracketed, KinkAtCriticalIntensity, NotLinearIdenticalCommunity
from fishery.hjb_solver import (
    SolverOptions,
    closed_form_linear,
    critical_tax,
    critical_tax_interval,
    hjb_residual,
    node_residuals,
    solve_value,
    value_audit,
    value_grid,
)

from .helpers import B_HAT, BETA, X_HAT, community, convex_agent, linear_agents, quadratic_agents


def linear_value(x):
    """v for one agent with f(u) = u, alpha_max = 1, left of x_hat"""
    return B_HAT / BETA * (x * (1 - X_HAT) / (X_HAT * (1 - x))) ** BETA


class ValueGridTests(SimpleTestCase):
    def test_x_hat_is_a_node(self):
        x, idx = value_grid(1e-3, 257, X_HAT)
        self.assertEqual(x[idx], X_HAT)
        self.assertTrue(np.all(np.diff(x) > 0))
        self.assertEqual((x[0], x[-1]), (1e-3, 1.0))

    @override_settings(FISHTAX_GRID_NODES=513, FISHTAX_X_MIN=0.01)
    def test_options_from_settings(self):
        opts = SolverOptions.from_settings(n_nodes=1025, residual_tol=None)
        self.assertEqual(opts.n_nodes, 1025)
        self.assertEqual(opts.x_min, 0.01)
        self.assertEqual(opts.residual_tol, SolverOptions.residual_tol)


class LinearCommunityTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.vc = community(linear_agents(1))
        cls.opts = SolverOptions(n_nodes=4097)
        cls.vt = solve_value(cls.vc, cls.opts)
        cls.exact = closed_form_linear(cls.vc, cls.opts)

    def test_anchor(self):
        self.assertAlmostEqual(self.vt.x_hat, X_HAT, places=11)
        self.assertAlmostEqual(self.vt.v_hat, 4.9875, places=9)
        self.assertAlmostEqual(self.vt.p_hat, 1.0, places=9)
        self.assertFalse(self.vt.kink)

    def test_known_value(self):
        self.assertAlmostEqual(self.vt.value(0.3), 4.8046, places=4)
        self.assertAlmostEqual(self.vt.value(0.3), linear_value(0.3), places=6)
        self.assertAlmostEqual(self.exact.value(0.3), linear_value(0.3), places=7)

    def test_matches_closed_form(self):
        np.testing.assert_array_equal(self.vt.x, self.exact.x)
        self.assertLessEqual(np.abs(self.vt.v - self.exact.v).max(), 1e-4)
        self.assertLessEqual(hjb_residual(self.vt), 1e-6)
        self.assertLessEqual(hjb_residual(self.exact), 1e-7)

    def test_refinement_shrinks_error(self):
        gaps = []
        for n in (257, 1025):
            opts = SolverOptions(n_nodes=n)
            gaps.append(np.abs(solve_value(self.vc, opts).v - closed_form_linear(self.vc, opts).v).max())
        self.assertLessEqual(gaps[1], gaps[0] / 4)

    def test_audit(self):
        audit = value_audit(self.vt)
        self.assertTrue(audit.passed)
        self.assertFalse(audit.kink)
        self.assertEqual(audit.as_dict()["max_residual"], audit.max_residual)

    def test_residual_detects_perturbation(self):
        bump = np.zeros_like(self.vt.v)
        bump[100] = 0.01
        shifted = node_residuals(self.vt.with_values(self.vt.v + bump)) - node_residuals(self.vt)
        self.assertAlmostEqual(shifted[100], BETA * 0.01, places=12)
        self.assertEqual(np.count_nonzero(shifted), 1)

    def test_value_below_grid(self):
        self.assertEqual(self.vt.value(0.0), 0.0)
        self.assertLess(self.vt.value(5e-4), self.vt.value(1e-3))
        v, p = self.vt.value_and_slope(0.5)
        self.assertAlmostEqual(v, self.vt.value(0.5), places=12)
        self.assertAlmostEqual(p, self.vt.slope(0.5), places=12)

    def test_critical_tax(self):
        self.assertAlmostEqual(critical_tax(self.vt), 1.0, places=9)

    def test_slope_cap(self):
        with self.assertRaises(BranchRootNotBracketed):
            solve_value(self.vc, SolverOptions(n_nodes=257, p_cap=1.5))


class ClosedFormTests(SimpleTestCase):
    opts = SolverOptions(n_nodes=513)

    def test_left_branch_independent_of_community_size(self):
        one = closed_form_linear(community(linear_agents(1)), self.opts)
        three = closed_form_linear(community(linear_agents(3)), self.opts)
        left = slice(0, one.hat_index + 1)
        np.testing.assert_allclose(one.p[left], three.p[left], rtol=1e-12)
        np.testing.assert_allclose(one.v[left], three.v[left], rtol=1e-12)

    def test_right_branch_slope_tends_to_unit_price(self):
        x = 0.9
        small = closed_form_linear(community(linear_agents(2)), self.opts).slope(x)
        large = closed_form_linear(community(linear_agents(50)), self.opts).slope(x)
        self.assertLess(abs(large - 1.0), abs(small - 1.0))
        self.assertLess(large, 1.0)

    def test_requires_identical_linear_agents(self):
        with self.assertRaises(NotLinearIdenticalCommunity):
            closed_form_linear(community(quadratic_agents(2, nodes=65)), self.opts)
        mixed = linear_agents(1) + linear_agents(1, slope=2.0)
        with self.assertRaises(NotLinearIdenticalCommunity):
            closed_form_linear(community(mixed), self.opts)


class RelaxationTests(SimpleTestCase):
    def test_revenue_and_hull_give_the_same_value(self):
        vc = community([convex_agent()])
        opts = SolverOptions(n_nodes=513)
        from_hull = solve_value(vc, opts)
        from_revenue = solve_value(vc, opts, revenue=vc.revenue)
        np.testing.assert_allclose(from_hull.v, from_revenue.v, atol=1e-9)

    def test_convex_revenue_has_linear_hull_value(self):
        # The hull of u^2 on [0, 1] is the identity, so the value is the linear one
        opts = SolverOptions(n_nodes=513)
        convex = solve_value(community([convex_agent()]), opts)
        linear = solve_value(community(linear_agents(1)), opts)
        np.testing.assert_allclose(convex.v, linear.v, atol=1e-9)


class QuadraticCommunityTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.vc = community(quadratic_agents(2))
        cls.vt = solve_value(cls.vc, SolverOptions(n_nodes=2049))

    def test_residual_and_audit(self):
        self.assertLessEqual(hjb_residual(self.vt), 1e-6)
        self.assertTrue(value_audit(self.vt).passed)

    def test_critical_tax_near_marginal_revenue(self):
        self.assertAlmostEqual(critical_tax(self.vt), 2.0 - B_HAT, delta=1e-3)
        interval = critical_tax_interval(self.vc)
        self.assertEqual(interval.lower, interval.upper)
        self.assertEqual(critical_tax(self.vt), interval.midpoint)

    def test_value_is_bounded_by_maximal_revenue(self):
        self.assertTrue(np.all(self.vt.v <= self.vc.max_revenue / BETA))
        self.assertTrue(np.all(self.vt.v > 0))


class CriticalTaxResolutionTests(SimpleTestCase):
    def test_fine_revenue_grid(self):
        for n in (1, 2, 4):
            vc = community(quadratic_agents(n, nodes=131073))
            self.assertAlmostEqual(critical_tax_interval(vc).midpoint, 2.0 - 2.0 * B_HAT / n, delta=1e-5)


class KinkedHullTests(SimpleTestCase):
    """A revenue whose hull has a corner exactly at b(x_hat) = 0.16"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        agent = AgentRevenue.from_tag("piecewise", 1.0, n_nodes=101, points=[[0, 0], [0.16, 0.32], [1, 0.74]])
        cls.vc = community([agent], beta=0.6, model=GrowthModel(r=1.0))

    def test_interval(self):
        self.assertAlmostEqual(self.vc.x_hat, 0.2, places=11)
        interval = critical_tax_interval(self.vc)
        self.assertAlmostEqual(interval.lower, 0.5, places=9)
        self.assertAlmostEqual(interval.upper, 2.0, places=9)
        self.assertTrue(interval.is_kink())

    def test_solver_flags_kink(self):
        vt = solve_value(self.vc, SolverOptions(n_nodes=257))
        self.assertTrue(vt.kink)
        self.assertAlmostEqual(vt.p_hat, 1.25, places=9)
        self.assertTrue(math.isclose(vt.v_hat, 0.32 / 0.6, rel_tol=1e-9))
        with self.assertRaises(KinkAtCriticalIntensity) as ctx:
            critical_tax(vt)
        self.assertAlmostEqual(ctx.exception.lower, 0.5, places=9)


def random_agent(rng):
    alpha_max = float(rng.uniform(0.4, 1.0))
    kind = rng.integers(3)
    if kind == 0:
        return AgentRevenue.from_tag("power", alpha_max, n_nodes=65, p=float(rng.uniform(0.5, 3.0)),
                                     scale=float(rng.uniform(0.5, 2.0)))
    if kind == 1:
        return AgentRevenue.from_tag("quadratic", alpha_max, n_nodes=65, a=2.0, b=-1.0)
    knots = np.sort(rng.uniform(0.0, alpha_max, 3))
    knots = np.append(knots, alpha_max)
    heights = np.cumsum(rng.uniform(0.05, 1.0, 4))
    points = [[0.0, 0.0]] + [[float(u), float(y)] for u, y in zip(knots, heights)]
    return AgentRevenue.from_tag("piecewise", alpha_max, n_nodes=65, points=points)


class RandomCommunityTests(SimpleTestCase):
    def test_value_is_increasing_and_concave(self):
        rng = np.random.default_rng(29)
        for trial in range(10):
            agents = [random_agent(rng) for _ in range(int(rng.integers(1, 4)))]
            vt = solve_value(community(agents), SolverOptions(n_nodes=513))
            audit = value_audit(vt)
            self.assertTrue(audit.increasing, msg=f"trial {trial}")
            self.assertTrue(audit.concave, msg=f"trial {trial}")
            self.assertLessEqual(audit.max_residual, 1e-6, msg=f"trial {trial}")


class HjbSlopeTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.vt = solve_value(community(quadratic_agents(2)), SolverOptions(n_nodes=1025))

    def gap(self, x, p):
        vt = self.vt
        return BETA * vt.value(x) - float(vt.model.rate(x)) * p - vt.hull.conjugate_at(p)

    def test_equals_node_slope(self):
        for k in (50, 300, 700, 1000):
            x = float(self.vt.x[k])
            self.assertAlmostEqual(self.vt.hjb_slope(x), self.vt.p[k], delta=1e-9 * max(1.0, self.vt.p[k]))
        self.assertEqual(self.vt.hjb_slope(self.vt.x_hat), self.vt.p_hat)

    def test_solves_hjb_between_nodes(self):
        x = self.vt.x
        for k in (50, 300, 700, 1000):
            mid = float(0.5 * (x[k] + x[k + 1]))
            p = self.vt.hjb_slope(mid)
            self.assertLessEqual(abs(self.gap(mid, p)), 1e-10, msg=f"x = {mid}")
            self.assertAlmostEqual(p, self.vt.slope(mid), delta=1e-4 * max(1.0, p))
