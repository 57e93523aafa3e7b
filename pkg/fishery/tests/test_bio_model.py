import math

import numpy as np
from django.test import SimpleTestCase

from fishery.bio_model import (
    AgentRevenue,
    Community,
    GrowthModel,
    Trajectory,
    community_violations,
    golden_rule,
    integrate_dynamics,
    time_mesh,
    validate_community,
)
from fishery.exceptions import (
    AssumptionOneViolated,
    DiscountTooLarge,
    FisheryError,
    NoInteriorGoldenRule,
    RevenueNegative,
    RevenueNonzeroAtOrigin,
)

from .helpers import B_HAT, BETA, VERHULST, X_HAT, linear_agents, quadratic_agents


class GrowthModelTests(SimpleTestCase):
    def test_golden_rule(self):
        self.assertAlmostEqual(golden_rule(VERHULST, BETA), X_HAT, places=11)

    def test_golden_rule_scales_with_rate(self):
        model = GrowthModel(r=2.0)
        self.assertAlmostEqual(golden_rule(model, 0.5), 0.375, places=11)

    def test_no_interior_golden_rule(self):
        with self.assertRaises(NoInteriorGoldenRule):
            golden_rule(VERHULST, 1.0)

    def test_level_below_peak(self):
        x = VERHULST.rate_level_below_peak(B_HAT)
        self.assertAlmostEqual(x, X_HAT, places=12)
        self.assertEqual(VERHULST.rate_level_below_peak(0.0), 0.0)

    def test_invalid_rate(self):
        with self.assertRaises(FisheryError):
            GrowthModel(r=0.0)


class AgentRevenueTests(SimpleTestCase):
    def test_equality_by_definition(self):
        a = AgentRevenue.from_tag("quadratic", 1.0, n_nodes=33, a=2.0, b=-1.0)
        b = AgentRevenue.from_tag("quadratic", 1.0, n_nodes=33, b=-1.0, a=2.0)
        c = AgentRevenue.from_tag("quadratic", 1.0, n_nodes=65, a=2.0, b=-1.0)
        self.assertEqual(a, b)
        self.assertEqual(hash(a), hash(b))
        self.assertNotEqual(a, c)

    def test_least_maximizer(self):
        self.assertEqual(quadratic_agents(1, nodes=65)[0].delta_star, 1.0)
        self.assertEqual(linear_agents(1, alpha_max=0.7)[0].delta_star, 0.7)
        flat = AgentRevenue.from_tag("piecewise", 1.0, n_nodes=11, points=[[0, 0], [0.4, 1], [1, 1]])
        self.assertAlmostEqual(flat.delta_star, 0.4)

    def test_piecewise_parameters_round_trip(self):
        agent = AgentRevenue.from_tag("piecewise", 1.0, n_nodes=11, points=[[0, 0], [1, 2]])
        self.assertEqual(agent.param_dict(), {"points": [[0, 0], [1, 2]]})
        self.assertAlmostEqual(agent(0.5), 1.0)

    def test_unknown_tag(self):
        with self.assertRaises(FisheryError):
            AgentRevenue.from_tag("cubic", 1.0)


class ValidationTests(SimpleTestCase):
    def test_valid_community(self):
        vc = validate_community(Community(tuple(quadratic_agents(2, nodes=65)), BETA), VERHULST)
        self.assertAlmostEqual(vc.x_hat, X_HAT, places=11)
        self.assertAlmostEqual(vc.critical_intensity, B_HAT, places=11)
        self.assertEqual(vc.delta_stars, (1.0, 1.0))
        self.assertAlmostEqual(vc.max_revenue, 2.0)

    def test_assumption_one_carries_numbers(self):
        with self.assertRaises(AssumptionOneViolated) as ctx:
            validate_community(Community(tuple(linear_agents(1, alpha_max=0.2)), BETA), VERHULST)
        self.assertEqual(ctx.exception.max_growth, 0.25)
        self.assertAlmostEqual(ctx.exception.total_demand, 0.2)
        self.assertIn("0.25", str(ctx.exception))

    def test_every_violation_is_listed(self):
        shifted = AgentRevenue.from_tag("piecewise", 0.2, n_nodes=5, points=[[0, 0.1], [0.1, -0.5], [0.2, 0.3]])
        issues = community_violations(Community((shifted,), 2.0), VERHULST)
        kinds = [type(issue) for issue in issues]
        self.assertIn(RevenueNonzeroAtOrigin, kinds)
        self.assertIn(RevenueNegative, kinds)
        self.assertIn(DiscountTooLarge, kinds)
        self.assertIn(AssumptionOneViolated, kinds)

    def test_empty_community(self):
        with self.assertRaises(FisheryError):
            validate_community(Community((), BETA), VERHULST)

    def test_nested_prefix(self):
        c = Community(tuple(quadratic_agents(3, nodes=33)), BETA)
        self.assertEqual(c.prefix(2).n, 2)
        self.assertEqual(c.prefix(1).extended(c.agents[1]).agents, c.agents[:2])


class DynamicsTests(SimpleTestCase):
    def test_unharvested_logistic_growth(self):
        x0 = 0.1
        traj = integrate_dynamics(VERHULST, lambda t, x: 0.0, x0, 5.0, 1e-2)
        t = traj.times
        exact = x0 * np.exp(t) / (1.0 - x0 + x0 * np.exp(t))
        np.testing.assert_allclose(traj.states, exact, atol=1e-9)
        self.assertEqual(traj.controls.size, traj.times.size - 1)

    def test_extinction_under_overharvest(self):
        traj = integrate_dynamics(VERHULST, lambda t, x: 0.5, 0.3, 20.0, 1e-2)
        self.assertTrue(math.isfinite(traj.extinction_time))
        self.assertLess(traj.extinction_time, 20.0)
        self.assertEqual(traj.final_state, 0.0)
        self.assertEqual(traj.controls[-1], 0.0)
        self.assertEqual(traj.times[-1], 20.0)

    def test_stop_predicate(self):
        traj = integrate_dynamics(VERHULST, lambda t, x: 0.0, 0.1, 50.0, 1e-2, stop=lambda t, x: x > 0.4)
        self.assertGreater(traj.final_state, 0.4)
        self.assertLess(traj.states[-2], 0.4)

    def test_fourth_order_in_time_varying_control(self):
        def control(t, x):
            return 0.1 + 0.08 * math.sin(3.0 * t)

        finals = [integrate_dynamics(VERHULST, control, 0.5, 4.0, dt).final_state for dt in (0.1, 0.05, 0.025)]
        ratio = abs(finals[0] - finals[1]) / abs(finals[1] - finals[2])
        self.assertGreater(ratio, 12.0)
        self.assertLess(ratio, 20.0)

    def test_larger_start_stays_above(self):
        rng = np.random.default_rng(17)
        horizon, dt = 10.0, 1e-2
        for _ in range(20):
            switches = np.sort(rng.uniform(0.0, horizon, 6))
            levels = rng.uniform(0.0, 0.4, switches.size + 1)

            def control(t, x, switches=switches, levels=levels):
                return float(levels[np.searchsorted(switches, t, side="right")])

            lower_x0, upper_x0 = np.sort(rng.uniform(0.0, 1.0, 2))
            paths = [
                integrate_dynamics(VERHULST, control, float(x0), horizon, dt, breakpoints=switches, piecewise_constant=True)
                for x0 in (lower_x0, upper_x0)
            ]
            mesh = time_mesh(0.0, horizon, dt, switches)
            lower, upper = (np.interp(mesh, p.times, p.states) for p in paths)
            self.assertTrue(np.all(lower <= upper + 1e-12), msg=f"x0 = {lower_x0}, {upper_x0}")
            self.assertLessEqual(paths[0].extinction_time, paths[1].extinction_time)

    def test_mesh_contains_breakpoints(self):
        mesh = time_mesh(0.0, 1.0, 0.1, breakpoints=[0.25, 0.3, 2.0])
        self.assertIn(0.25, mesh)
        self.assertEqual(mesh[-1], 1.0)
        self.assertTrue(np.all(np.diff(mesh) > 0))

    def test_discount_weights_integrate_exponential(self):
        traj = Trajectory.hold(X_HAT, B_HAT, 0.0, 10.0, 0.3)
        self.assertAlmostEqual(traj.discount_weights(BETA).sum(), (1.0 - math.exp(-0.5)) / BETA, places=12)
        paid = traj.with_revenue(np.ones(traj.controls.size)).discounted_revenue(BETA)
        self.assertAlmostEqual(paid, (1.0 - math.exp(-0.5)) / BETA, places=12)

    def test_concat(self):
        head = Trajectory.hold(0.3, 0.1, 0.0, 1.0, 0.5)
        tail = Trajectory.hold(0.3, 0.1, 1.0, 2.0, 0.5)
        joined = head.concat(tail)
        np.testing.assert_allclose(joined.times, [0.0, 0.5, 1.0, 1.5, 2.0])
        self.assertEqual(joined.controls.size, 4)
