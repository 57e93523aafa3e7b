import math

import numpy as np
from django.test import SimpleTestCase

from fishery.bio_model import AgentRevenue, Community, Trajectory
from fishery.exceptions import CommunityNotNested, FisheryError, HorizonTooShort
from fishery.hjb_solver import SolverOptions, solve_value
from fishery.tax_engine import (
    PsiEvaluator,
    critical_tax_monotonicity,
    myopic_response,
    psi,
    run_taxation,
    stabilization_time,
)

from .helpers import B_HAT, BETA, VERHULST, community, linear_agents, quadratic_agents

EPSILON = 0.05
DELTA = 0.02


class MyopicResponseTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.vc = community(quadratic_agents(2))
        cls.vt = solve_value(cls.vc, SolverOptions(n_nodes=2049))

    def test_aggregate_lies_in_demand(self):
        for z in np.linspace(0.1, 2.5, 25):
            lo, hi = self.vc.revenue_hull.demand(z)
            total = sum(myopic_response(self.vc, z))
            self.assertTrue(lo - 1e-12 <= total <= hi + 1e-12, msg=f"z = {z}")

    def test_prohibitive_tax_stops_harvest(self):
        self.assertEqual(myopic_response(self.vc, 2.5), (0.0, 0.0))

    def test_psi_vanishes_at_posted_tax(self):
        for k in range(5, self.vt.x.size, 97):
            x = float(self.vt.x[k])
            alpha = myopic_response(self.vc, float(self.vt.p[k]))
            self.assertLess(abs(psi(x, alpha, self.vt, self.vc)), 1e-8, msg=f"x = {x}")

    def test_psi_drops_off_the_best_response(self):
        evaluator = PsiEvaluator(self.vt, self.vc)
        x = 0.45
        alpha = myopic_response(self.vc, self.vt.slope(x))
        best = evaluator(x, alpha)
        self.assertGreater(sum(alpha), 0.0)
        for shift in (-0.1, 0.1):
            moved = (min(max(alpha[0] + shift, 0.0), 1.0), alpha[1])
            self.assertLess(evaluator(x, moved), best)
        self.assertLess(evaluator(x, (0.0, 0.0)), best)

    def test_feedback_signs_at_nodes(self):
        idx = self.vt.hat_index
        for k in list(range(0, idx - 2, 50)) + list(range(idx + 3, self.vt.x.size, 50)):
            drift = float(VERHULST.rate(self.vt.x[k])) - sum(myopic_response(self.vc, float(self.vt.p[k])))
            if k < idx:
                self.assertGreater(drift, 0.0)
            else:
                self.assertLess(drift, 0.0)


class TaxationTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.vc = community(quadratic_agents(2))
        cls.vt = solve_value(cls.vc, SolverOptions(n_nodes=2049))
        cls.runs = {x0: run_taxation(cls.vt, cls.vc, x0, EPSILON, DELTA, dt=1e-3)
                    for x0 in (0.1, 0.3, cls.vc.x_hat, 0.7, 0.9)}

    def test_epsilon_optimal(self):
        for x0, run in self.runs.items():
            self.assertTrue(run.epsilon_optimal, msg=f"x0 = {x0}")
            self.assertGreaterEqual(run.payoff, run.value_at_start - EPSILON - run.truncation_bound)
            self.assertLessEqual(run.truncation_bound, EPSILON / 10)
            self.assertAlmostEqual(run.value_at_start, self.vt.value(x0), places=12)

    def test_settles_in_band(self):
        x_hat = self.vc.x_hat
        for x0, run in self.runs.items():
            self.assertTrue(run.stabilized, msg=f"x0 = {x0}")
            traj = run.trajectory
            after = traj.times >= run.stabilization_time
            self.assertTrue(np.all(np.abs(traj.states[after] - x_hat) < DELTA), msg=f"x0 = {x0}")

    def test_start_at_golden_rule_stays_in_band(self):
        run = self.runs[self.vc.x_hat]
        self.assertTrue(np.all(np.abs(run.trajectory.states - self.vc.x_hat) <= DELTA + 1e-9))

    def test_switch_record(self):
        for x0, run in self.runs.items():
            self.assertEqual(run.switch_times[0], 0.0)
            self.assertEqual(run.switch_states[0], x0)
            self.assertGreater(run.min_gap, 0.0)
            self.assertTrue(np.all(np.abs(run.psi_at_switch) <= 1e-8), msg=f"x0 = {x0}")
            self.assertEqual(run.actions.shape, (run.n_switches, 2))
            for z, alpha in zip(run.taxes, run.actions):
                self.assertEqual(tuple(alpha), myopic_response(self.vc, z))

    def test_trajectory_layout(self):
        run = self.runs[0.3]
        traj = run.trajectory
        self.assertEqual(traj.controls.size, traj.times.size - 1)
        np.testing.assert_allclose(traj.agent_controls.sum(axis=1), traj.controls, atol=1e-15)
        per_step = run.tax_per_step()
        self.assertEqual(per_step.size, traj.controls.size)
        self.assertEqual(per_step[0], run.taxes[0])
        self.assertEqual(per_step[-1], run.taxes[-1])
        self.assertTrue(np.all(np.diff(traj.times) > 0))

    def test_low_stock_is_left_to_grow(self):
        run = self.runs[0.1]
        self.assertEqual(tuple(run.actions[0]), (0.0, 0.0))
        self.assertGreater(run.taxes[0], 2.0)

    def test_summary(self):
        summary = self.runs[0.7].summary()
        self.assertEqual(summary["switches"], self.runs[0.7].n_switches)
        self.assertTrue(summary["epsilon_optimal"])
        self.assertLessEqual(summary["max_abs_psi_at_switch"], 1e-8)
        self.assertAlmostEqual(summary["epsilon_gap"], summary["value_at_start"] - summary["payoff"])

    def test_short_horizon(self):
        with self.assertRaises(HorizonTooShort):
            run_taxation(self.vt, self.vc, 0.1, EPSILON, DELTA, horizon=1.0, dt=1e-2)

    def test_rejects_bad_arguments(self):
        with self.assertRaises(FisheryError):
            run_taxation(self.vt, self.vc, 0.3, 0.0, DELTA)
        with self.assertRaises(FisheryError):
            run_taxation(self.vt, self.vc, 1.2, EPSILON, DELTA)


class LinearTaxationTests(SimpleTestCase):
    def test_no_harvest_below_golden_rule(self):
        vc = community(linear_agents(1))
        vt = solve_value(vc, SolverOptions(n_nodes=1025))
        run = run_taxation(vt, vc, 0.2, EPSILON, DELTA, dt=1e-3)
        self.assertEqual(tuple(run.actions[0]), (0.0,))
        self.assertTrue(run.epsilon_optimal)
        self.assertTrue(run.stabilized)


class StabilizationTimeTests(SimpleTestCase):
    def test_last_exit(self):
        traj = Trajectory(np.arange(5.0), np.array([0.1, 0.46, 0.5, 0.47, 0.48]), np.zeros(4))
        self.assertEqual(stabilization_time(traj, 0.475, 0.02), 3.0)
        inside = Trajectory(np.arange(3.0), np.full(3, 0.475), np.zeros(2))
        self.assertEqual(stabilization_time(inside, 0.475, 0.02), 0.0)
        leaving = Trajectory(np.arange(3.0), np.array([0.475, 0.48, 0.6]), np.zeros(2))
        self.assertTrue(math.isinf(stabilization_time(leaving, 0.475, 0.02)))


class CriticalTaxMonotonicityTests(SimpleTestCase):
    def test_linear_chain_is_constant(self):
        chain = [community(linear_agents(n)) for n in range(1, 6)]
        report = critical_tax_monotonicity(chain, VERHULST)
        self.assertTrue(report.monotone)
        np.testing.assert_allclose(report.values, 1.0, atol=1e-12)
        self.assertEqual([e.n_agents for e in report.entries], [1, 2, 3, 4, 5])

    def test_quadratic_chain(self):
        agents = tuple(quadratic_agents(4, nodes=131073))
        chain = [Community(agents[:n], BETA) for n in (1, 2, 4)]
        report = critical_tax_monotonicity(chain, VERHULST)
        expected = [2.0 - 2.0 * B_HAT / n for n in (1, 2, 4)]
        np.testing.assert_allclose(report.values, expected, atol=1e-5)
        self.assertTrue(all(b > a for a, b in zip(report.values, report.values[1:])))
        self.assertFalse(any(e.kink for e in report.entries))

    def test_random_nested_chains(self):
        rng = np.random.default_rng(1234)

        def random_agent():
            alpha_max = float(rng.choice([0.5, 1.0]))
            nodes = int(round(alpha_max * 64)) + 1
            kind = rng.integers(3)
            if kind == 0:
                return AgentRevenue.from_tag("linear", alpha_max, n_nodes=nodes, slope=float(rng.uniform(0.5, 3.0)))
            if kind == 1:
                return AgentRevenue.from_tag("quadratic", alpha_max, n_nodes=nodes,
                                             a=float(rng.uniform(1.0, 3.0)), b=-float(rng.uniform(0.2, 1.0)))
            return AgentRevenue.from_tag("power", alpha_max, n_nodes=nodes,
                                         p=float(rng.choice([2.0, 3.0])), scale=float(rng.uniform(0.5, 2.0)))

        for trial in range(20):
            agents = tuple(random_agent() for _ in range(4))
            chain = [Community(agents[:n], BETA) for n in range(1, 5)]
            report = critical_tax_monotonicity(chain, VERHULST)
            self.assertTrue(report.monotone, msg=f"trial {trial}")
            values = report.values
            self.assertTrue(all(b >= a - 1e-8 for a, b in zip(values, values[1:])), msg=f"trial {trial}")

    def test_chain_must_be_nested(self):
        chain = [community(quadratic_agents(1, nodes=65)), community(linear_agents(1))]
        with self.assertRaises(CommunityNotNested):
            critical_tax_monotonicity(chain, VERHULST)

    def test_chain_must_share_discount(self):
        chain = [community(linear_agents(1)), community(linear_agents(2), beta=0.1)]
        with self.assertRaises(CommunityNotNested):
            critical_tax_monotonicity(chain, VERHULST)
