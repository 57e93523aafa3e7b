"""
HJB Solver Module

Computes the cooperative value function v on [x_min, 1] from the stationary
Hamilton-Jacobi-Bellman equation

    beta v(x) = b(x) v'(x) + F_hat(v'(x)),

anchored at the golden-rule stock x_hat where beta v(x_hat) = F_tilde(b(x_hat)), and
marched outwards with fourth-order steps. At every stage v'(x) is recovered from the
equation itself by root finding on the monotone branch.
"""

import logging
from bisect import bisect_right
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator
from scipy.optimize import brentq

from .bio_model import GrowthModel, ValidatedCommunity
from .convex_kit import ConcaveGridFunction, GridFunction, SuperdiffInterval, concave_hull
from .exceptions import (
    BranchRootNotBracketed,
    KinkAtCriticalIntensity,
    NonConcaveValueDetected,
    NotLinearIdenticalCommunity,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverOptions:
    n_nodes: int = 4097
    x_min: float = 1e-3
    residual_tol: float = 1e-6
    root_xtol: float = 1e-14
    p_cap: float = 1e6
    monotone_tol: float = 1e-9
    quad_tol: float = 1e-13

    @classmethod
    def from_settings(cls, **overrides) -> "SolverOptions":
        """Defaults from Django settings, overridden by explicit keyword arguments"""
        from django.conf import settings

        values = {
            "n_nodes": getattr(settings, "FISHTAX_GRID_NODES", cls.n_nodes),
            "x_min": getattr(settings, "FISHTAX_X_MIN", cls.x_min),
            "residual_tol": getattr(settings, "FISHTAX_RESIDUAL_TOL", cls.residual_tol),
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True, eq=False)
class ValueTable:
    """Solved value function on a grid containing x_hat"""

    x: np.ndarray
    v: np.ndarray
    p: np.ndarray
    residual: np.ndarray
    x_hat: float
    hat_index: int
    beta: float
    model: GrowthModel
    hull: ConcaveGridFunction
    critical_interval: SuperdiffInterval
    kink: bool = False
    source: str = "march"

    @property
    def v_hat(self) -> float:
        return float(self.v[self.hat_index])

    @property
    def p_hat(self) -> float:
        return float(self.p[self.hat_index])

    @property
    def x_min(self) -> float:
        return float(self.x[0])

    @cached_property
    def _near_zero(self) -> PchipInterpolator:
        # Monotone cubic through the origin and the first few nodes
        head = slice(0, 4)
        return PchipInterpolator(np.concatenate(([0.0], self.x[head])), np.concatenate(([0.0], self.v[head])))

    @cached_property
    def _hermite(self) -> CubicHermiteSpline:
        # Node derivatives are the solved slopes p
        return CubicHermiteSpline(self.x, self.v, self.p)

    @cached_property
    def _lists(self) -> Tuple[List[float], List[List[float]]]:
        return self.x.tolist(), self._hermite.c.T.tolist()

    def _inside(self, arr: np.ndarray) -> np.ndarray:
        return np.clip(arr, self.x[0], self.x[-1])

    def value(self, x):
        arr = np.asarray(x, dtype=float)
        out = self._hermite(self._inside(arr))
        below = arr < self.x[0]
        if np.any(below):
            out = np.where(below, self._near_zero(np.clip(arr, 0.0, None)), out)
        return float(out) if out.ndim == 0 else out

    def slope(self, x):
        arr = np.asarray(x, dtype=float)
        out = self._hermite(self._inside(arr), 1)
        below = arr < self.x[0]
        if np.any(below):
            out = np.where(below, self._near_zero.derivative()(np.clip(arr, 0.0, None)), out)
        return float(out) if out.ndim == 0 else out

    def value_and_slope(self, x: float) -> Tuple[float, float]:
        """Scalar cubic Hermite evaluation of (v, v') for hot loops"""
        xs, coeffs = self._lists
        if x <= xs[0]:
            return float(self.value(x)), float(self.slope(x))

        x = min(x, xs[-1])
        j = min(bisect_right(xs, x), len(xs) - 1) - 1
        a, b, c, d = coeffs[j]
        s = x - xs[j]
        return ((a * s + b) * s + c) * s + d, (3.0 * a * s + 2.0 * b) * s + c

    def hjb_slope(self, x: float) -> float:
        """
        v'(x) re-solved from beta v(x) = b(x) p + F_hat(p) on the branch of x

        Equals the node slope at grid nodes. Between nodes the HJB identity holds for
        the interpolated value up to the root tolerance.
        """
        if x <= self.x[0]:
            return float(self.slope(x))
        if x == self.x_hat:
            return self.p_hat
        solver = _SlopeSolver(self.hull, self.model, self.beta, self.p_hat, SolverOptions())
        return solver(x, self.value_and_slope(x)[0], left=x < self.x_hat)

    def with_values(self, v) -> "ValueTable":
        return replace(self, v=np.asarray(v, dtype=float))


def value_grid(x_min: float, n_nodes: int, x_hat: float) -> Tuple[np.ndarray, int]:
    """Uniform grid on [x_min, 1] with x_hat inserted; returns (grid, index of x_hat)"""
    grid = np.linspace(x_min, 1.0, n_nodes)
    spacing = grid[1] - grid[0]
    close = np.abs(grid - x_hat) <= 1e-9 * spacing
    if np.any(close):
        idx = int(np.argmax(close))
        grid[idx] = x_hat
        return grid, idx
    idx = int(np.searchsorted(grid, x_hat))
    return np.insert(grid, idx, x_hat), idx


def node_residuals(vt: ValueTable) -> np.ndarray:
    """beta v - b v' - F_hat(v') at every node"""
    b = vt.model.rate(vt.x)
    return vt.beta * vt.v - b * vt.p - vt.hull.conjugate_many(vt.p)


def hjb_residual(vt: ValueTable) -> float:
    return float(np.abs(node_residuals(vt)).max())


def anchor(hull: ConcaveGridFunction, model: GrowthModel, beta: float, x_hat: float):
    """Value and slope at the golden-rule stock; flags a kink of the hull at b(x_hat)"""
    b_hat = float(model.rate(x_hat))
    interval = hull.superdifferential(b_hat)
    kink = interval.is_kink()
    if kink:
        logger.warning(
            "Hull has a kink at b(x_hat) = %.12f: superdifferential [%.12f, %.12f]; using midpoint",
            b_hat, interval.lower, interval.upper,
        )
    return hull(b_hat) / beta, interval.midpoint, interval, kink


class _SlopeSolver:
    """Recovers p from beta v = b(x) p + F_hat(p) on the left or right branch"""

    def __init__(self, hull: ConcaveGridFunction, model: GrowthModel, beta: float, p_hat: float,
                 opts: SolverOptions):
        self.hull = hull
        self.model = model
        self.beta = beta
        self.p_hat = p_hat
        self.opts = opts
        self.b_max = hull.hi

    def __call__(self, x: float, v: float, left: bool) -> float:
        b = min(max(float(self.model.rate(x)), 0.0), self.b_max)
        target = self.beta * v
        conj = self.hull.conjugate_at

        def gap(p):
            return b * p + conj(p) - target

        interval = self.hull.superdifferential(b)
        if left:
            lo = max(self.p_hat, interval.upper)
            if gap(lo) >= 0.0:
                return lo
            hi = max(2.0 * self.p_hat + 1.0, 2.0 * lo + 1.0)
            while gap(hi) <= 0.0:
                hi *= 2.0
                logger.debug("Doubling slope bracket to %.3g at x = %.6f", hi, x)
                if hi > self.opts.p_cap:
                    raise BranchRootNotBracketed(
                        f"No root of the HJB equation below {self.opts.p_cap:g} at x = {x:.6g}"
                    )
        else:
            hi = min(self.p_hat, interval.lower)
            if gap(hi) >= 0.0:
                return hi
            lo = 0.0
            if gap(lo) < 0.0:
                raise BranchRootNotBracketed(
                    f"beta v = {target:.6g} exceeds the maximal revenue at x = {x:.6g}"
                )
        return brentq(gap, lo, hi, xtol=self.opts.root_xtol, rtol=4 * np.finfo(float).eps)


def _march(solver: _SlopeSolver, xs: np.ndarray, v0: float, p0: float, left: bool):
    vs, ps = [v0], [p0]
    v, p = v0, p0
    for k in range(1, xs.size):
        x0, x1 = float(xs[k - 1]), float(xs[k])
        h = x1 - x0
        mid = x0 + 0.5 * h
        k1 = p
        k2 = solver(mid, v + 0.5 * h * k1, left)
        k3 = solver(mid, v + 0.5 * h * k2, left)
        k4 = solver(x1, v + h * k3, left)
        v = v + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        p = solver(x1, v, left)
        vs.append(v)
        ps.append(p)
    return vs, ps


def _check_concave(x: np.ndarray, p: np.ndarray, tol: float) -> None:
    rises = np.diff(p) > tol * np.maximum(1.0, np.abs(p[:-1]))
    if np.any(rises):
        k = int(np.argmax(rises))
        raise NonConcaveValueDetected(
            f"v' increases between x = {x[k]:.9f} and x = {x[k + 1]:.9f} "
            f"({p[k]:.12g} -> {p[k + 1]:.12g})"
        )


def solve_value(
    c: ValidatedCommunity,
    opts: Optional[SolverOptions] = None,
    revenue: Optional[GridFunction] = None,
) -> ValueTable:
    """
    Solve the HJB equation by anchoring at x_hat and marching to x_min and to 1

    Args:
        c: Validated community
        opts: Solver options; library defaults when omitted
        revenue: Revenue function to build the Hamiltonian from (F or its hull);
            defaults to the community's cooperative revenue

    Returns:
        ValueTable with residuals at every node
    """
    opts = opts or SolverOptions()
    hull = concave_hull(revenue) if revenue is not None else c.revenue_hull
    model, beta, x_hat = c.model, c.beta, c.x_hat
    v_hat, p_hat, interval, kink = anchor(hull, model, beta, x_hat)
    logger.info("Anchor: x_hat = %.12f, v(x_hat) = %.12g, v'(x_hat) = %.12g", x_hat, v_hat, p_hat)

    x, idx = value_grid(opts.x_min, opts.n_nodes, x_hat)
    solver = _SlopeSolver(hull, model, beta, p_hat, opts)
    left_v, left_p = _march(solver, x[idx::-1], v_hat, p_hat, left=True)
    right_v, right_p = _march(solver, x[idx:], v_hat, p_hat, left=False)
    v = np.concatenate((left_v[::-1], right_v[1:]))
    p = np.concatenate((left_p[::-1], right_p[1:]))
    _check_concave(x, p, opts.monotone_tol)

    table = ValueTable(x, v, p, np.zeros_like(v), x_hat, idx, beta, model, hull, interval, kink)
    residual = node_residuals(table)
    table = replace(table, residual=residual)
    logger.info("Value function solved on %d nodes, max residual %.3e", x.size, np.abs(residual).max())
    if np.abs(residual).max() > opts.residual_tol:
        logger.warning("Max HJB residual %.3e exceeds tolerance %.1e", np.abs(residual).max(), opts.residual_tol)
    return table


def _linear_identical(c: ValidatedCommunity) -> Tuple[float, float]:
    agents = c.agents
    first = agents[0]
    if first.tag != "linear" or any(a.tag != "linear" or a.params != first.params
                                    or a.alpha_max != first.alpha_max for a in agents):
        raise NotLinearIdenticalCommunity("Closed form needs identical agents with linear revenue")
    return dict(first.params).get("slope", 1.0), first.alpha_max


def _cumulative(integrand, xs: np.ndarray, tol: float) -> np.ndarray:
    pieces = [quad(integrand, a, b, epsabs=tol, epsrel=tol)[0] for a, b in zip(xs[:-1], xs[1:])]
    return np.concatenate(([0.0], np.cumsum(pieces)))


def closed_form_linear(c: ValidatedCommunity, opts: Optional[SolverOptions] = None) -> ValueTable:
    """
    Two-branch closed form for n identical agents with f(u) = slope * u

    Left of x_hat the stock is left to grow; right of x_hat every agent harvests at
    full intensity n alpha_max.
    """
    opts = opts or SolverOptions()
    slope, alpha_max = _linear_identical(c)
    model, beta, x_hat = c.model, c.beta, c.x_hat
    capacity = c.community.n * alpha_max
    b_hat = float(model.rate(x_hat))
    x, idx = value_grid(opts.x_min, opts.n_nodes, x_hat)

    left = x[idx::-1]
    # integral of beta / b from left[k] up to x_hat; the grid runs downward
    grow = -_cumulative(lambda y: beta / model.rate(y), left, opts.quad_tol)
    v_left = slope * b_hat / beta * np.exp(-grow)
    p_left = slope * b_hat / model.rate(left) * np.exp(-grow)

    right = x[idx:]
    fish = _cumulative(lambda y: beta / (capacity - model.rate(y)), right, opts.quad_tol)
    v_right = slope / beta * ((b_hat - capacity) * np.exp(-fish) + capacity)
    p_right = slope * (capacity - b_hat) / (capacity - model.rate(right)) * np.exp(-fish)

    v = np.concatenate((v_left[::-1], v_right[1:]))
    p = np.concatenate((p_left[::-1], p_right[1:]))
    hull = c.revenue_hull
    interval = hull.superdifferential(b_hat)
    table = ValueTable(x, v, p, np.zeros_like(v), x_hat, idx, beta, model, hull, interval,
                       interval.is_kink(), source="closed_form")
    return replace(table, residual=node_residuals(table))


def critical_tax(vt: ValueTable) -> float:
    """v'(x_hat), the tax that holds the stock at the golden rule"""
    if vt.kink:
        raise KinkAtCriticalIntensity(vt.critical_interval.lower, vt.critical_interval.upper)
    return vt.p_hat


def critical_tax_interval(c: ValidatedCommunity) -> SuperdiffInterval:
    """Superdifferential of the revenue hull at b(x_hat), without solving the HJB equation"""
    return c.revenue_hull.superdifferential(c.critical_intensity)


@dataclass(frozen=True)
class ValueAudit:
    increasing: bool
    concave: bool
    max_residual: float
    feedback_signs: bool
    kink: bool

    @property
    def passed(self) -> bool:
        return self.increasing and self.concave and self.feedback_signs

    def as_dict(self) -> Dict:
        return {
            "increasing": self.increasing,
            "concave": self.concave,
            "max_residual": self.max_residual,
            "feedback_signs": self.feedback_signs,
            "kink": self.kink,
        }


def value_audit(vt: ValueTable) -> ValueAudit:
    """Structural checks: v increasing, v' decreasing, feedback drift pointing to x_hat"""
    b = vt.model.rate(vt.x)
    demand = np.array([sum(vt.hull.demand(p)) / 2.0 for p in vt.p])
    drift = b - demand
    below = np.arange(vt.x.size) < vt.hat_index
    above = np.arange(vt.x.size) > vt.hat_index
    return ValueAudit(
        increasing=bool(np.all(np.diff(vt.v) > 0)),
        concave=bool(np.all(np.diff(vt.p) < 0)),
        max_residual=hjb_residual(vt),
        feedback_signs=bool(np.all(drift[below] > 0) and np.all(drift[above] < 0)),
        kink=vt.kink,
    )
