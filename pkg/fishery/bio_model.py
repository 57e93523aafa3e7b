"""
Population Dynamics Module

This module defines the fish population growth law, the harvesting agents and their
community, validates the standing assumptions of the harvesting problem and
integrates the controlled state equation X' = b(X) - q.
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect

from .convex_kit import ConcaveGridFunction, GridFunction, concave_hull, inf_convolution
from .exceptions import (
    AssumptionOneViolated,
    DiscountTooLarge,
    FisheryError,
    NoInteriorGoldenRule,
    RevenueNegative,
    RevenueNonzeroAtOrigin,
)

logger = logging.getLogger(__name__)

DEFAULT_REVENUE_NODES = 4097
GOLDEN_RULE_TOL = 1e-14
REVENUE_TAGS = ("linear", "quadratic", "power", "piecewise")


@dataclass(frozen=True)
class GrowthModel:
    """
    Scaled Verhulst growth b(x) = r x (1 - x) on [0, 1]

    Other concave growth laws plug in by overriding rate() and slope(); the
    solvers only use b, b', max b and the Lipschitz constant.
    """

    r: float = 1.0
    family: str = "verhulst"

    def __post_init__(self):
        if self.family != "verhulst":
            raise FisheryError(f"Unsupported growth family: {self.family}")
        if not self.r > 0:
            raise FisheryError(f"Intrinsic rate must be positive, got {self.r}")

    def rate(self, x):
        return self.r * x * (1.0 - x)

    def slope(self, x):
        return self.r * (1.0 - 2.0 * x)

    @property
    def lipschitz(self) -> float:
        return self.r

    @property
    def max_rate(self) -> float:
        return 0.25 * self.r

    def rate_level_below_peak(self, level: float) -> float:
        """Smallest x with b(x) = level, for 0 <= level <= max b"""
        return 0.5 * (1.0 - math.sqrt(max(0.0, 1.0 - 4.0 * level / self.r)))


def _revenue_callable(tag: str, params: Dict) -> Callable:
    if tag == "linear":
        slope = params.get("slope", 1.0)
        return lambda u: slope * u
    if tag == "quadratic":
        a, b = params.get("a", 0.0), params.get("b", 0.0)
        return lambda u: a * u + b * u * u
    if tag == "power":
        p, scale = params["p"], params.get("scale", 1.0)
        return lambda u: scale * np.power(u, p)
    if tag == "piecewise":
        points = np.asarray(params["points"], dtype=float)
        return lambda u: np.interp(u, points[:, 0], points[:, 1])
    raise FisheryError(f"Unknown revenue tag: {tag}")


def _freeze(params: Dict) -> Tuple:
    frozen = []
    for key in sorted(params):
        value = params[key]
        if isinstance(value, (list, tuple)):
            value = tuple(tuple(v) if isinstance(v, (list, tuple)) else v for v in value)
        frozen.append((key, value))
    return tuple(frozen)


@dataclass(frozen=True, eq=False)
class AgentRevenue:
    """One agent: revenue function f on [0, alpha_max], sampled on a uniform grid"""

    tag: str
    params: Tuple
    alpha_max: float
    samples: GridFunction

    @classmethod
    def from_tag(cls, tag: str, alpha_max: float, n_nodes: int = DEFAULT_REVENUE_NODES, **params):
        if tag not in REVENUE_TAGS:
            raise FisheryError(f"Unknown revenue tag: {tag}")
        if not alpha_max > 0:
            raise FisheryError(f"alpha_max must be positive, got {alpha_max}")
        func = _revenue_callable(tag, params)
        samples = GridFunction.from_callable(func, 0.0, alpha_max, n_nodes)
        return cls(tag, _freeze(params), float(alpha_max), samples)

    @property
    def key(self) -> Tuple:
        return (self.tag, self.params, self.alpha_max, self.samples.n_nodes)

    def __eq__(self, other):
        return isinstance(other, AgentRevenue) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __call__(self, u):
        return self.samples(u)

    def param_dict(self) -> Dict:
        return {k: ([list(p) for p in v] if k == "points" else v) for k, v in self.params}

    @cached_property
    def delta_star(self) -> float:
        """Least maximizer of f"""
        return self.samples.least_argmax(0.0)

    @property
    def max_revenue(self) -> float:
        return float(self.samples.values.max())


@dataclass(frozen=True)
class Community:
    agents: Tuple[AgentRevenue, ...]
    beta: float

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def q_max(self) -> float:
        return sum(a.alpha_max for a in self.agents)

    def prefix(self, size: int) -> "Community":
        return replace(self, agents=self.agents[:size])

    def extended(self, agent: AgentRevenue) -> "Community":
        return replace(self, agents=self.agents + (agent,))


@dataclass(frozen=True, eq=False)
class ValidatedCommunity:
    """A community that satisfied every standing assumption, with cached derived data"""

    community: Community
    model: GrowthModel
    x_hat: float
    delta_stars: Tuple[float, ...]

    @property
    def agents(self) -> Tuple[AgentRevenue, ...]:
        return self.community.agents

    @property
    def beta(self) -> float:
        return self.community.beta

    @property
    def q_max(self) -> float:
        return self.community.q_max

    @property
    def critical_intensity(self) -> float:
        return float(self.model.rate(self.x_hat))

    @cached_property
    def revenue(self) -> GridFunction:
        return inf_convolution([a.samples for a in self.agents])

    @cached_property
    def revenue_hull(self) -> ConcaveGridFunction:
        return concave_hull(self.revenue)

    @property
    def max_revenue(self) -> float:
        """F_hat(0) = sum of f_i(delta*_i)"""
        return sum(a.max_revenue for a in self.agents)


def golden_rule(model: GrowthModel, beta: float, tol: float = GOLDEN_RULE_TOL) -> float:
    """Unique x_hat in (0, 1) with b'(x_hat) = beta"""
    if beta >= model.slope(0.0):
        raise NoInteriorGoldenRule(
            f"beta = {beta} is not below b'(0) = {model.slope(0.0)}; no interior golden rule"
        )
    return float(bisect(lambda x: model.slope(x) - beta, 0.0, 1.0, xtol=tol))


def community_violations(c: Community, m: GrowthModel) -> List[FisheryError]:
    """Every violated assumption, in a stable order"""
    issues: List[FisheryError] = []
    for i, agent in enumerate(c.agents):
        origin = agent.samples.values[0]
        if abs(origin) > 1e-12:
            issues.append(RevenueNonzeroAtOrigin(f"agents[{i}]: f(0) = {origin:.17g}, expected 0"))
        lowest = agent.samples.values.min()
        if lowest < 0:
            issues.append(RevenueNegative(f"agents[{i}]: revenue reaches {lowest:.17g} < 0"))
    if not c.beta > 0:
        issues.append(DiscountTooLarge(f"beta must be positive, got {c.beta}"))
    elif c.beta >= m.slope(0.0):
        issues.append(DiscountTooLarge(f"beta = {c.beta} is not below b'(0) = {m.slope(0.0)}"))
    if c.agents:
        total = sum(a.delta_star for a in c.agents)
        if not m.max_rate < total:
            issues.append(AssumptionOneViolated(m.max_rate, total))
    else:
        issues.append(FisheryError("A community needs at least one agent"))
    return issues


def validate_community(c: Community, m: GrowthModel) -> ValidatedCommunity:
    """
    Check the standing assumptions and cache the derived quantities

    Raises:
        The first violated assumption, as its specific FisheryError subclass
    """
    issues = community_violations(c, m)
    if issues:
        raise issues[0]
    x_hat = golden_rule(m, c.beta)
    logger.debug("Validated community of %d agents, x_hat = %.12f", c.n, x_hat)
    return ValidatedCommunity(c, m, x_hat, tuple(a.delta_star for a in c.agents))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Sampled state path

    `controls` holds one aggregate intensity per integration step, applied on
    [times[k], times[k + 1]); `revenue` and `agent_controls` follow the same layout.
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    extinction_time: float = math.inf
    revenue: Optional[np.ndarray] = None
    agent_controls: Optional[np.ndarray] = None

    @property
    def final_state(self) -> float:
        return float(self.states[-1])

    def discount_weights(self, beta: float) -> np.ndarray:
        """Exact integrals of exp(-beta t) over each step"""
        decay = np.exp(-beta * self.times)
        return (decay[:-1] - decay[1:]) / beta

    def discounted_revenue(self, beta: float) -> float:
        if self.revenue is None:
            raise FisheryError("Trajectory carries no revenue")
        return float(np.dot(self.revenue, self.discount_weights(beta)))

    def with_revenue(self, revenue) -> "Trajectory":
        return replace(self, revenue=np.asarray(revenue, dtype=float))

    def concat(self, tail: "Trajectory") -> "Trajectory":
        """Append a trajectory starting where this one ends"""
        def join(a, b):
            if a is None or b is None:
                return None
            return np.concatenate((a, b))
        return Trajectory(
            np.concatenate((self.times, tail.times[1:])),
            np.concatenate((self.states, tail.states[1:])),
            np.concatenate((self.controls, tail.controls)),
            min(self.extinction_time, tail.extinction_time),
            join(self.revenue, tail.revenue),
            join(self.agent_controls, tail.agent_controls),
        )

    @classmethod
    def hold(cls, x: float, q: float, t0: float, horizon: float, dt: float) -> "Trajectory":
        """Stationary path at a fixed point x with b(x) = q"""
        times = time_mesh(t0, horizon, dt)
        return cls(times, np.full(times.size, x), np.full(times.size - 1, q))


def time_mesh(t0: float, horizon: float, dt: float, breakpoints: Sequence[float] = ()) -> np.ndarray:
    n_steps = max(1, int(math.ceil((horizon - t0) / dt - 1e-9)))
    mesh = t0 + dt * np.arange(n_steps + 1)
    mesh[-1] = horizon
    if len(breakpoints):
        inside = np.asarray([b for b in breakpoints if t0 < b < horizon], dtype=float)
        mesh = np.union1d(mesh, inside)
        # Drop mesh nodes that sit on top of a breakpoint
        keep = np.concatenate(([True], np.diff(mesh) > 1e-12 * max(1.0, horizon)))
        mesh = mesh[keep]
        mesh[-1] = horizon
    return mesh


def rk4_step(
    model: GrowthModel,
    control: Callable[[float, float], float],
    t: float,
    x: float,
    h: float,
    frozen_time: bool = False,
) -> float:
    """
    One classical Runge-Kutta step of X' = b(X) - control(t, X)

    Stages are evaluated at t, t + h/2, t + h/2 and t + h. With frozen_time every
    stage sees t + h/2, which keeps a control that switches on the step ends
    constant inside the step.
    """
    rate = model.rate
    mid = t + 0.5 * h
    ta, tb = (mid, mid) if frozen_time else (t, t + h)
    k1 = rate(x) - control(ta, x)
    y = x + 0.5 * h * k1
    k2 = rate(y) - control(mid, y)
    y = x + 0.5 * h * k2
    k3 = rate(y) - control(mid, y)
    y = x + h * k3
    k4 = rate(y) - control(tb, y)
    return x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def constant_rk4_step(model: GrowthModel, q: float, x: float, h: float) -> float:
    rate = model.rate
    k1 = rate(x) - q
    k2 = rate(x + 0.5 * h * k1) - q
    k3 = rate(x + 0.5 * h * k2) - q
    k4 = rate(x + h * k3) - q
    return x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def integrate_dynamics(
    m: GrowthModel,
    control: Callable[[float, float], float],
    x0: float,
    horizon: float,
    dt: float,
    breakpoints: Sequence[float] = (),
    stop: Optional[Callable[[float, float], bool]] = None,
    t0: float = 0.0,
    piecewise_constant: bool = False,
) -> Trajectory:
    """
    Fixed-step RK4 integration of X' = b(X) - q(t, X)

    Args:
        m: Growth model
        control: q(t, x)
        x0: Initial stock in [0, 1]
        horizon: Final time
        dt: Step length
        breakpoints: Times inserted into the mesh (switches of piecewise-constant controls)
        stop: Optional predicate stop(t, x) checked after every step
        t0: Initial time
        piecewise_constant: q is constant in t between mesh nodes (switches on
            breakpoints); time is then frozen at the step midpoint so a switch on a
            step end is never seen inside the step

    Returns:
        Trajectory; extinction is reported through extinction_time, after which the
        control is zero and the state is pinned at 0
    """
    if not 0.0 <= x0 <= 1.0:
        raise FisheryError(f"Initial state {x0} outside [0, 1]")
    if not dt > 0:
        raise FisheryError(f"Step must be positive, got {dt}")
    mesh = time_mesh(t0, horizon, dt, breakpoints)
    times: List[float] = [float(mesh[0])]
    states: List[float] = [float(x0)]
    controls: List[float] = []
    extinction = math.inf
    x = float(x0)
    for k in range(mesh.size - 1):
        ta, tb = float(mesh[k]), float(mesh[k + 1])
        h = tb - ta
        mid = ta + 0.5 * h
        x_next = rk4_step(m, control, ta, x, h, frozen_time=piecewise_constant)
        if x_next <= 0.0:
            # Extinction inside the step: linear interpolation of the crossing
            t_cross = ta + h * x / (x - x_next) if x > 0 else ta
            controls.append(control(mid, x))
            times.append(t_cross)
            states.append(0.0)
            extinction = t_cross
            if t_cross < float(mesh[-1]):
                controls.append(0.0)
                times.append(float(mesh[-1]))
                states.append(0.0)
            break
        x_next = min(x_next, 1.0)
        controls.append(control(mid, 0.5 * (x + x_next)))
        times.append(tb)
        states.append(x_next)
        x = x_next
        if stop is not None and stop(tb, x):
            break
    if math.isfinite(extinction):
        logger.debug("Population extinct at t = %.6f", extinction)
    return Trajectory(np.array(times), np.array(states), np.array(controls), extinction)
