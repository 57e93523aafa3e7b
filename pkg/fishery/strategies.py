"""
Harvesting Strategies Module

Builds and evaluates the harvesting strategies of the cooperative problem:

- optimal feedback from the value function, switching to the golden-rule static
  harvest once the stock reaches x_hat
- static harvesting at a constant intensity
- the relaxed two-point mix on the concave hull of the revenue
- pulse fishing, a periodic bang-bang control approximating the relaxed mix

Payoffs are discounted integrals of the revenue along the integrated trajectory,
truncated at a horizon with an explicit bound on the neglected tail.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .bio_model import GrowthModel, Trajectory, ValidatedCommunity, integrate_dynamics
from .convex_kit import ChatterTriple, ConcaveGridFunction, GridFunction, chatter_decompose, split_intensity
from .exceptions import DegenerateChatter, EpsilonTooLarge, FisheryError, PointOutsideDomain
from .hjb_solver import ValueTable

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
ARRIVAL_TOL = 1e-6
PAYOFF_TOL = 1e-6
QUAD_TOL = 1e-12
G_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class StaticStrategy:
    intensity: float


@dataclass(frozen=True, eq=False)
class FeedbackStrategy:
    table: ValueTable


@dataclass(frozen=True, eq=False)
class RelaxedMixStrategy:
    """Feedback on the concavified problem, then the mix (p1, p2, kappa) held at x_hat"""

    table: ValueTable
    chatter: ChatterTriple


@dataclass(frozen=True)
class PulseStrategy:
    """
    Periodic control started at x_hat

    Harvest p1 for tau1 (stock rises to x_hat + g), p2 for tau2 (stock falls to
    x_hat - epsilon), then p1 for tau3 (back to x_hat).
    """

    p1: float
    p2: float
    kappa: float
    epsilon: float
    g: float
    tau1: float
    tau2: float
    tau3: float
    x_hat: float
    table: Optional[ValueTable] = None

    @property
    def period(self) -> float:
        return self.tau1 + self.tau2 + self.tau3

    def intensity_at(self, phase: float) -> float:
        return self.p2 if self.tau1 <= phase < self.tau1 + self.tau2 else self.p1


Strategy = Union[StaticStrategy, FeedbackStrategy, RelaxedMixStrategy, PulseStrategy]


@dataclass(frozen=True)
class PayoffEstimate:
    value: float
    truncation_bound: float
    horizon: float

    def as_dict(self):
        return {"value": self.value, "truncation_bound": self.truncation_bound, "horizon": self.horizon}


def default_horizon(c: ValidatedCommunity, tol: float = PAYOFF_TOL) -> float:
    """T = ln(F_max / (beta tol)) / beta, so the neglected tail is at most tol"""
    top = c.max_revenue
    if top <= 0:
        return 1.0
    return max(1.0, math.log(top / (c.beta * tol)) / c.beta)


def truncation_bound(c: ValidatedCommunity, horizon: float) -> float:
    return c.max_revenue * math.exp(-c.beta * horizon) / c.beta


def _feedback_control(vt: ValueTable, hull: ConcaveGridFunction):
    demand = hull.demand
    value_and_slope = vt.value_and_slope

    def control(t, y):
        lo, hi = demand(value_and_slope(y)[1])
        return 0.5 * (lo + hi)

    return control


def _feedback_prefix(
    vt: ValueTable,
    m: GrowthModel,
    x: float,
    horizon: float,
    dt: float,
    hull: Optional[ConcaveGridFunction],
    arrival_tol: float,
) -> Optional[Trajectory]:
    """Path from x towards x_hat, cut at the arrival time with the last state pinned on x_hat"""
    x_hat = vt.x_hat
    if abs(x - x_hat) <= arrival_tol:
        return None
    side = 1.0 if x < x_hat else -1.0

    def arrived(t, y):
        return side * (x_hat - y) <= arrival_tol

    prefix = integrate_dynamics(m, _feedback_control(vt, hull or vt.hull), x, horizon, dt, stop=arrived)
    if not arrived(prefix.times[-1], prefix.final_state):
        logger.debug("Feedback path from x = %.6f did not reach x_hat by t = %.3f", x, horizon)
        return prefix

    times, states = prefix.times.copy(), prefix.states.copy()
    y0, y1 = states[-2], states[-1]
    if side * (y1 - x_hat) > 0 and y1 != y0:
        # Overshoot: move the final node back to the crossing
        w = (x_hat - y0) / (y1 - y0)
        times[-1] = times[-2] + w * (times[-1] - times[-2])
    states[-1] = x_hat
    logger.debug("Feedback path from x = %.6f reached x_hat at t = %.6f", x, times[-1])
    return replace(prefix, times=times, states=states)


def _arrival_time(prefix: Optional[Trajectory], x_hat: float) -> float:
    if prefix is None:
        return 0.0
    return float(prefix.times[-1]) if prefix.final_state == x_hat else math.inf


def feedback_trajectory(
    vt: ValueTable,
    m: GrowthModel,
    x: float,
    horizon: float,
    dt: float = DEFAULT_DT,
    hull: Optional[ConcaveGridFunction] = None,
    arrival_tol: float = ARRIVAL_TOL,
) -> Trajectory:
    """
    Optimal feedback path: X' = b(X) - q(v'(X)) until X reaches x_hat, then q = b(x_hat)

    Args:
        vt: Solved value function
        m: Growth model
        x: Initial stock in (x_min, 1)
        horizon: Final time
        dt: Integration step
        hull: Concave revenue whose demand map is used; defaults to the table's hull
        arrival_tol: Distance to x_hat counted as arrival

    Returns:
        Trajectory with one control per step (midpoint of the demand interval)
    """
    b_hat = float(m.rate(vt.x_hat))
    prefix = _feedback_prefix(vt, m, x, horizon, dt, hull, arrival_tol)
    t_arrive = _arrival_time(prefix, vt.x_hat)
    if t_arrive >= horizon:
        return prefix
    tail = Trajectory.hold(vt.x_hat, b_hat, t_arrive, horizon, dt)
    return tail if prefix is None else prefix.concat(tail)


def build_pulse(
    m: GrowthModel,
    F: GridFunction,
    F_hull: ConcaveGridFunction,
    x_hat: float,
    eps: float,
    table: Optional[ValueTable] = None,
) -> PulseStrategy:
    """
    Pulse fishing around x_hat with lower excursion eps

    The upper excursion g balances the time-weighted growth surplus above x_hat
    against the deficit below it; the three phase durations follow from the
    harvest levels p1 < b(x_hat) < p2 of the chatter decomposition.

    Raises:
        DegenerateChatter: F touches its hull at b(x_hat); carries the static fallback
        EpsilonTooLarge: The band leaves the region where p1 < b < p2 or no g exists
    """
    b_hat = float(m.rate(x_hat))
    triple = chatter_decompose(F, F_hull, b_hat)
    if triple.is_degenerate:
        raise DegenerateChatter(
            f"Revenue touches its hull at b(x_hat) = {b_hat:.12g}; static harvesting is optimal",
            static_strategy=StaticStrategy(b_hat),
        )
    p1, p2 = triple.p1, triple.p2
    if not eps > 0:
        raise EpsilonTooLarge(f"epsilon must be positive, got {eps}")
    low_limit = m.rate_level_below_peak(p1) if p1 > 0 else 0.0
    if x_hat - eps <= low_limit:
        raise EpsilonTooLarge(
            f"x_hat - epsilon = {x_hat - eps:.6g} is not above {low_limit:.6g} where b = p1 = {p1:.6g}"
        )
    # Above x_hat the stock must stay below 1 - x_hat (where b returns to b(x_hat)) and below b = p2
    g_max = 1.0 - 2.0 * x_hat
    if p2 < m.max_rate:
        g_max = min(g_max, m.rate_level_below_peak(p2) - x_hat)

    def rho(x):
        b = m.rate(x)
        return 1.0 / ((b - p1) * (p2 - b))

    def integral(func, a, b):
        return quad(func, a, b, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)[0]

    deficit = integral(lambda x: (b_hat - m.rate(x)) * rho(x), x_hat - eps, x_hat)

    def balance(g):
        return integral(lambda x: (m.rate(x) - b_hat) * rho(x), x_hat, x_hat + g) - deficit

    g_top = g_max * (1.0 - 1e-12)
    if not g_top > 0 or balance(g_top) < 0:
        raise EpsilonTooLarge(
            f"No upper excursion balances epsilon = {eps:g}: the surplus above x_hat is capped "
            f"at {deficit + balance(g_top) if g_top > 0 else 0.0:.6g} < {deficit:.6g}"
        )
    g = brentq(balance, 0.0, g_top, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    residual = abs(balance(g))
    if residual > G_RESIDUAL_TOL:
        logger.warning("Pulse balance residual %.3e at eps = %g", residual, eps)

    tau1 = integral(lambda x: 1.0 / (m.rate(x) - p1), x_hat, x_hat + g)
    tau2 = integral(lambda x: 1.0 / (p2 - m.rate(x)), x_hat - eps, x_hat + g)
    tau3 = integral(lambda x: 1.0 / (m.rate(x) - p1), x_hat - eps, x_hat)
    logger.info(
        "Pulse eps = %g: g = %.9g, tau = (%.9g, %.9g, %.9g), period %.9g",
        eps, g, tau1, tau2, tau3, tau1 + tau2 + tau3,
    )
    return PulseStrategy(p1, p2, triple.kappa, eps, g, tau1, tau2, tau3, x_hat, table)


def pulse_balance_residual(m: GrowthModel, s: PulseStrategy) -> float:
    """Re-evaluates the defining integral identity of g at the built strategy"""
    b_hat = float(m.rate(s.x_hat))

    def weighted(x):
        b = m.rate(x)
        return (b - b_hat) / ((b - s.p1) * (s.p2 - b))

    above = quad(weighted, s.x_hat, s.x_hat + s.g, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)[0]
    below = quad(weighted, s.x_hat - s.epsilon, s.x_hat, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200)[0]
    return abs(above + below)


def pulse_payoff_closed_form(
    s: PulseStrategy, F: GridFunction, beta: float, periods: Optional[int] = None
) -> PayoffEstimate:
    """
    Exact discounted payoff of the pulse control started at x_hat

    Sums the geometric series over periods; with `periods` the sum stops after that
    many periods and the truncation bound is the discarded tail.
    """
    t1, t12, tau = s.tau1, s.tau1 + s.tau2, s.period
    f1, f2 = float(F(s.p1)), float(F(s.p2))
    one_period = (
        (1.0 - math.exp(-beta * t1)) * f1
        + (math.exp(-beta * t1) - math.exp(-beta * t12)) * f2
        + (math.exp(-beta * t12) - math.exp(-beta * tau)) * f1
    ) / beta
    full = one_period / (1.0 - math.exp(-beta * tau))
    if periods is None:
        return PayoffEstimate(full, 0.0, math.inf)
    horizon = periods * tau
    kept = full * (1.0 - math.exp(-beta * horizon))
    return PayoffEstimate(kept, full - kept, horizon)


def pulse_trajectory(
    m: GrowthModel,
    s: PulseStrategy,
    horizon: float,
    dt: float = DEFAULT_DT,
    t0: float = 0.0,
    x0: Optional[float] = None,
) -> Trajectory:
    """Integrates the periodic schedule from t0, with every switch placed on the time mesh"""
    tau = s.period
    n_periods = int(math.ceil((horizon - t0) / tau)) + 1
    starts = t0 + tau * np.arange(n_periods)
    switches = np.concatenate((starts, starts + s.tau1, starts + s.tau1 + s.tau2))

    def control(t, y):
        return s.intensity_at((t - t0) % tau)

    x_start = s.x_hat if x0 is None else x0
    return integrate_dynamics(
        m, control, x_start, horizon, dt, breakpoints=np.sort(switches), t0=t0, piecewise_constant=True
    )


def _static_trajectory(m: GrowthModel, q: float, x: float, horizon: float, dt: float) -> Trajectory:
    if float(m.rate(x)) == q:
        return Trajectory.hold(x, q, 0.0, horizon, dt)
    return integrate_dynamics(m, lambda t, y: q, x, horizon, dt)


def strategy_trajectory(
    m: GrowthModel,
    c: ValidatedCommunity,
    s: Strategy,
    x: float,
    horizon: float,
    dt: float = DEFAULT_DT,
    arrival_tol: float = ARRIVAL_TOL,
) -> Trajectory:
    """Integrated path of a strategy from x with the per-step revenue attached"""
    F = c.revenue
    if isinstance(s, StaticStrategy):
        if not 0.0 <= s.intensity <= c.q_max:
            raise PointOutsideDomain(f"Static intensity {s.intensity} outside [0, {c.q_max}]")
        traj = _static_trajectory(m, s.intensity, x, horizon, dt)
        return traj.with_revenue(F(traj.controls))

    if isinstance(s, FeedbackStrategy):
        traj = feedback_trajectory(s.table, m, x, horizon, dt, arrival_tol=arrival_tol)
        return traj.with_revenue(F(traj.controls))

    if isinstance(s, RelaxedMixStrategy):
        vt, mix = s.table, s.chatter
        b_hat = float(m.rate(vt.x_hat))
        prefix = _feedback_prefix(vt, m, x, horizon, dt, vt.hull, arrival_tol)
        t_arrive = _arrival_time(prefix, vt.x_hat)
        pieces = []
        if prefix is not None:
            pieces.append(prefix.with_revenue(vt.hull(prefix.controls)))
        if t_arrive < horizon:
            tail = Trajectory.hold(vt.x_hat, b_hat, t_arrive, horizon, dt)
            held = mix.kappa * float(F(mix.p1)) + (1.0 - mix.kappa) * float(F(mix.p2))
            pieces.append(tail.with_revenue(np.full(tail.controls.size, held)))
        return _join(pieces)

    if isinstance(s, PulseStrategy):
        pieces = []
        t_arrive = 0.0
        if s.table is not None:
            prefix = _feedback_prefix(s.table, m, x, horizon, dt, s.table.hull, arrival_tol)
            t_arrive = _arrival_time(prefix, s.x_hat)
            if prefix is not None:
                pieces.append(prefix.with_revenue(F(prefix.controls)))
        elif abs(x - s.x_hat) > arrival_tol:
            raise FisheryError("A pulse strategy without a value table starts at x_hat only")
        if t_arrive < horizon:
            tail = pulse_trajectory(m, s, horizon, dt, t0=t_arrive)
            pieces.append(tail.with_revenue(F(tail.controls)))
        return _join(pieces)

    raise FisheryError(f"Unknown strategy type: {type(s).__name__}")


def _join(pieces: List[Trajectory]) -> Trajectory:
    out = pieces[0]
    for piece in pieces[1:]:
        out = out.concat(piece)
    return out


def payoff(
    m: GrowthModel,
    c: ValidatedCommunity,
    s: Strategy,
    x: float,
    horizon: Optional[float] = None,
    dt: float = DEFAULT_DT,
    tol: float = PAYOFF_TOL,
) -> PayoffEstimate:
    """
    Discounted revenue of a strategy started at x, truncated at the horizon

    Args:
        horizon: Final time; by default chosen so the neglected tail is at most tol
        dt: Integration step
        tol: Truncation target used for the default horizon

    Returns:
        PayoffEstimate with the explicit truncation bound F_max exp(-beta T) / beta
    """
    horizon = default_horizon(c, tol) if horizon is None else horizon
    traj = strategy_trajectory(m, c, s, x, horizon, dt)
    return PayoffEstimate(traj.discounted_revenue(c.beta), truncation_bound(c, horizon), horizon)


def split_to_agents(q: float, fs: Sequence, F: Optional[GridFunction] = None) -> Tuple[float, ...]:
    """
    Per-agent intensities attaining F(q)

    Raises:
        PointOutsideDomain: q outside [0, sum of alpha_max]
    """
    shares = split_intensity(q, fs)
    if F is not None:
        total = sum(float(f(a)) for f, a in zip(fs, shares))
        if abs(total - float(F(q))) > 1e-9 * max(1.0, abs(total)):
            logger.warning("Split of q = %.9g reaches %.12g, F(q) = %.12g", q, total, float(F(q)))
    return shares


def static_sweep(
    m: GrowthModel,
    c: ValidatedCommunity,
    x: float,
    intensities: Optional[Sequence[float]] = None,
    horizon: Optional[float] = None,
    dt: float = DEFAULT_DT,
) -> List[Tuple[float, PayoffEstimate]]:
    """Payoffs of constant harvesting over a range of admissible intensities"""
    if intensities is None:
        intensities = np.linspace(0.0, c.q_max, 11)
    results = []
    for q in intensities:
        estimate = payoff(m, c, StaticStrategy(float(q)), x, horizon, dt)
        results.append((float(q), estimate))
    logger.debug("Static sweep from x = %.6f over %d intensities", x, len(results))
    return results


@dataclass(frozen=True, eq=False)
class Verification:
    times: np.ndarray
    process: np.ndarray
    drift: float


def verification_process(traj: Trajectory, vt: ValueTable, beta: float) -> Verification:
    """
    W(t) = discounted revenue collected up to t + exp(-beta t) v(X_t)

    Along an optimal path W is constant; drift is max |W - W(0)| / |W(0)|.
    """
    if traj.revenue is None:
        raise FisheryError("Trajectory carries no revenue")
    collected = np.concatenate(([0.0], np.cumsum(traj.revenue * traj.discount_weights(beta))))
    process = collected + np.exp(-beta * traj.times) * vt.value(traj.states)
    start = process[0]
    drift = float(np.abs(process - start).max() / max(abs(start), np.finfo(float).tiny))
    return Verification(traj.times, process, drift)
