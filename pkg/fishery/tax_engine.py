"""
Taxation Engine Module

Simulates proportional taxation of harvesting intensity. At each switching time the
regulator posts the tax z = v'(X), every agent picks its myopic best response to
f_i(u) - z u, and the intensities stay frozen until the profit-gap function psi falls
below -beta epsilon or the stock leaves its band around x_hat.

Also checks that the critical tax v'(x_hat) never decreases when agents join.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .bio_model import (
    Community,
    GrowthModel,
    Trajectory,
    ValidatedCommunity,
    constant_rk4_step,
    validate_community,
)
from .convex_kit import agent_best_response
from .exceptions import CommunityNotNested, CriticalTaxDecreased, HorizonTooShort, FisheryError
from .hjb_solver import ValueTable, critical_tax_interval
from .strategies import default_horizon, truncation_bound

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-8
SAME_STATE_TOL = 1e-12


def myopic_response(c: ValidatedCommunity, z: float) -> Tuple[float, ...]:
    """Least maximizer of f_i(u) - z u for every agent"""
    return tuple(agent_best_response(agent.samples, z) for agent in c.agents)


class PsiEvaluator:
    """
    psi(x, alpha) = -beta v(x) + (b(x) - sum alpha) v'(x) + sum f_i(alpha_i)

    Zero where the posted intensities solve the HJB equation; negative when the frozen
    intensities lose value against the cooperative optimum.
    """

    def __init__(self, vt: ValueTable, c: ValidatedCommunity):
        self.vt = vt
        self.community = c
        self.beta = c.beta
        self.model = c.model

    def totals(self, alpha: Sequence[float]) -> Tuple[float, float]:
        """(sum of intensities, sum of revenues)"""
        revenue = sum(float(agent(a)) for agent, a in zip(self.community.agents, alpha))
        return float(sum(alpha)), revenue

    def fixed(self, x: float, total: float, revenue: float, slope: Optional[float] = None) -> float:
        v, p = self.vt.value_and_slope(x)
        if slope is not None:
            p = slope
        return -self.beta * v + (float(self.model.rate(x)) - total) * p + revenue

    def __call__(self, x: float, alpha: Sequence[float]) -> float:
        return self.fixed(x, *self.totals(alpha))


def psi(x: float, alpha: Sequence[float], vt: ValueTable, c: ValidatedCommunity) -> float:
    return PsiEvaluator(vt, c)(x, alpha)


@dataclass(frozen=True, eq=False)
class TaxRun:
    switch_times: np.ndarray
    switch_states: np.ndarray
    taxes: np.ndarray
    actions: np.ndarray
    psi_at_switch: np.ndarray
    trajectory: Trajectory
    payoff: float
    truncation_bound: float
    value_at_start: float
    epsilon: float
    delta: float
    epsilon_optimal: bool
    stabilization_time: float
    min_gap: float
    kink: bool = False

    @property
    def n_switches(self) -> int:
        return int(self.switch_times.size)

    @property
    def epsilon_gap(self) -> float:
        """Shortfall of the realized payoff against v(x0)"""
        return self.value_at_start - self.payoff

    @property
    def stabilized(self) -> bool:
        return math.isfinite(self.stabilization_time)

    def tax_per_step(self) -> np.ndarray:
        """Posted tax on each integration step"""
        idx = np.searchsorted(self.switch_times, self.trajectory.times[:-1], side="right") - 1
        return self.taxes[np.clip(idx, 0, self.taxes.size - 1)]

    def summary(self):
        return {
            "payoff": self.payoff,
            "value_at_start": self.value_at_start,
            "epsilon_gap": self.epsilon_gap,
            "truncation_bound": self.truncation_bound,
            "epsilon_optimal": self.epsilon_optimal,
            "stabilization_time": self.stabilization_time if self.stabilized else None,
            "switches": self.n_switches,
            "min_gap": self.min_gap if math.isfinite(self.min_gap) else None,
            "max_abs_psi_at_switch": float(np.abs(self.psi_at_switch).max()),
            "kink": self.kink,
        }


def _band_gap(x: float, x_hat: float, delta: float, start: float) -> float:
    """Positive while the stock stays inside its band for a segment started at `start`"""
    if abs(start - x_hat) <= SAME_STATE_TOL:
        return delta - abs(x - x_hat)
    if start < x_hat:
        return x_hat + delta - x
    return x - (x_hat - delta)


def stabilization_time(traj: Trajectory, x_hat: float, delta: float) -> float:
    """First sampled time after which the stock never leaves (x_hat - delta, x_hat + delta)"""
    outside = np.abs(traj.states - x_hat) >= delta
    if not outside.any():
        return float(traj.times[0])
    last = int(np.flatnonzero(outside)[-1])
    if last == traj.states.size - 1:
        return math.inf
    return float(traj.times[last + 1])


def run_taxation(
    vt: ValueTable,
    c: ValidatedCommunity,
    x0: float,
    eps: float,
    delta: float,
    horizon: Optional[float] = None,
    dt: Optional[float] = None,
) -> TaxRun:
    """
    Step-by-step positional control through a proportional tax

    Args:
        vt: Solved value function of the community
        c: Validated community
        x0: Initial stock in (x_min, 1)
        eps: Payoff tolerance; psi < -beta eps triggers a new tax
        delta: Half-width of the band around x_hat
        horizon: Final time; by default the truncation bound is eps / 10
        dt: Integration step; by default min(grid spacing, 1e-3 / r)

    Returns:
        TaxRun with the switching record, the trajectory and the realized payoff

    Raises:
        HorizonTooShort: The stock has not settled in its band and the truncated
            tail exceeds eps / 10
    """
    if not eps > 0 or not delta > 0:
        raise FisheryError(f"epsilon and delta must be positive, got {eps}, {delta}")
    if not 0.0 < x0 < 1.0:
        raise FisheryError(f"Initial state {x0} outside (0, 1)")
    m, beta, x_hat = c.model, c.beta, vt.x_hat
    if horizon is None:
        horizon = default_horizon(c, eps / 10.0)
    if dt is None:
        dt = min(float(vt.x[1] - vt.x[0]), 1e-3 / m.r)
    if vt.kink:
        logger.warning("Critical intensity sits on a kink of the revenue hull; running anyway")

    evaluator = PsiEvaluator(vt, c)
    threshold = -beta * eps
    times, states, controls, revenue, agent_rows = [0.0], [float(x0)], [], [], []
    switch_t, switch_x, taxes, actions, psi_marks = [], [], [], [], []

    t, x = 0.0, float(x0)
    while t < horizon:
        z = vt.hjb_slope(x)
        alpha = myopic_response(c, z)
        total, gain = evaluator.totals(alpha)
        start = x
        switch_t.append(t)
        switch_x.append(x)
        taxes.append(z)
        actions.append(alpha)
        psi_marks.append(evaluator.fixed(x, total, gain, slope=z))
        logger.debug("Switch %d at t = %.6f, x = %.9f: tax %.9g, total intensity %.6g",
                     len(switch_t) - 1, t, x, z, total)

        def trigger(y):
            return min(evaluator.fixed(y, total, gain) - threshold, _band_gap(y, x_hat, delta, start))

        gap = trigger(x)
        while t < horizon:
            h = min(dt, horizon - t)
            y = constant_rk4_step(m, total, x, h)
            y = min(max(y, 0.0), 1.0)
            gap_next = trigger(y)
            if gap_next < 0.0 < gap:
                # Linear interpolation of the crossing, then a partial step to it
                h *= min(gap / (gap - gap_next), 1.0)
                y = min(max(constant_rk4_step(m, total, x, h), 0.0), 1.0)
                t += h
                x = y
                times.append(t)
                states.append(x)
                controls.append(total)
                revenue.append(gain)
                agent_rows.append(alpha)
                break
            t += h
            x, gap = y, gap_next
            times.append(t)
            states.append(x)
            controls.append(total)
            revenue.append(gain)
            agent_rows.append(alpha)

    traj = Trajectory(
        np.array(times),
        np.array(states),
        np.array(controls),
        revenue=np.array(revenue),
        agent_controls=np.array(agent_rows, dtype=float).reshape(len(agent_rows), c.community.n),
    )
    realized = traj.discounted_revenue(beta)
    tail = truncation_bound(c, horizon)
    start_value = float(vt.value(x0))
    settle = stabilization_time(traj, x_hat, delta)
    if not math.isfinite(settle) and tail > eps / 10.0:
        raise HorizonTooShort(
            f"Stock has not settled within {delta:g} of x_hat by t = {horizon:g} "
            f"and the truncated tail {tail:.3e} exceeds epsilon / 10"
        )
    gaps = np.diff(np.asarray(switch_t))
    min_gap = float(gaps.min()) if gaps.size else math.inf
    run = TaxRun(
        switch_times=np.asarray(switch_t),
        switch_states=np.asarray(switch_x),
        taxes=np.asarray(taxes),
        actions=np.asarray(actions, dtype=float).reshape(len(actions), c.community.n),
        psi_at_switch=np.asarray(psi_marks),
        trajectory=traj,
        payoff=realized,
        truncation_bound=tail,
        value_at_start=start_value,
        epsilon=eps,
        delta=delta,
        epsilon_optimal=realized >= start_value - eps - tail,
        stabilization_time=settle,
        min_gap=min_gap,
        kink=vt.kink,
    )
    logger.info(
        "Taxation from x0 = %.6f: %d switches, J = %.9g, v(x0) = %.9g, settled at %s",
        x0, run.n_switches, realized, start_value, f"{settle:.4f}" if run.stabilized else "never",
    )
    return run


@dataclass(frozen=True)
class CriticalTaxEntry:
    n_agents: int
    lower: float
    upper: float
    kink: bool

    @property
    def value(self) -> float:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class CriticalTaxReport:
    entries: Tuple[CriticalTaxEntry, ...]
    monotone: bool
    # Interval order (upper of the smaller <= lower of the larger) at kink pairs, reported only
    kink_orders: Tuple[Tuple[int, bool], ...] = field(default_factory=tuple)

    @property
    def values(self) -> List[float]:
        return [e.value for e in self.entries]


def _validated(c: Union[Community, ValidatedCommunity], m: GrowthModel) -> ValidatedCommunity:
    return c if isinstance(c, ValidatedCommunity) else validate_community(c, m)


def _contains(larger: Community, smaller: Community) -> bool:
    big, small = Counter(larger.agents), Counter(smaller.agents)
    return all(big[agent] >= count for agent, count in small.items())


def critical_tax_monotonicity(
    communities: Iterable[Union[Community, ValidatedCommunity]], m: GrowthModel
) -> CriticalTaxReport:
    """
    Critical tax (slope of the revenue hull at b(x_hat)) along a nested chain

    Raises:
        CommunityNotNested: A community does not contain its predecessor
        CriticalTaxDecreased: The tax drops by more than the slack between kink-free neighbours
    """
    chain = [_validated(c, m) for c in communities]
    entries: List[CriticalTaxEntry] = []
    kink_orders: List[Tuple[int, bool]] = []
    for k, vc in enumerate(chain):
        if k > 0:
            prev = chain[k - 1]
            if prev.beta != vc.beta or not _contains(vc.community, prev.community):
                raise CommunityNotNested(f"Community {k} does not contain community {k - 1}")
        interval = critical_tax_interval(vc)
        entry = CriticalTaxEntry(vc.community.n, interval.lower, interval.upper, interval.is_kink())
        if entry.kink:
            logger.warning("Community %d: kink at b(x_hat), slopes [%.12g, %.12g]", k, entry.lower, entry.upper)
        if entries:
            last = entries[-1]
            if last.kink or entry.kink:
                kink_orders.append((k, last.upper <= entry.lower + MONOTONE_SLACK))
            elif entry.value < last.value - MONOTONE_SLACK:
                raise CriticalTaxDecreased(
                    f"Critical tax drops from {last.value:.12g} ({last.n_agents} agents) "
                    f"to {entry.value:.12g} ({entry.n_agents} agents)"
                )
        entries.append(entry)
    logger.info("Critical taxes: %s", ", ".join(f"{e.value:.9g}" for e in entries))
    return CriticalTaxReport(tuple(entries), all(ok for _, ok in kink_orders), tuple(kink_orders))
