"""
Convex Analysis Kit

Piecewise-linear functions sampled on uniform grids, and the operations the
harvesting model needs on them: sup-convolution of agent revenues, concave hulls,
conjugates, superdifferentials, demand (argmax) maps and the chattering split of a
point on a hull bridge.

Every operation is exact for the piecewise-linear function the samples represent.
"""

import logging
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import EmptyAgentList, PointOutsideDomain

logger = logging.getLogger(__name__)

# Relative tolerances used throughout the kit
CONCAVITY_TOL = 1e-10
SLOPE_TIE_TOL = 1e-12
DOMAIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Piecewise-linear interpolant of values on a uniform grid over [lo, hi]"""

    lo: float
    hi: float
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("A grid function needs at least two nodes")
        if not np.all(np.isfinite(values)):
            raise ValueError("Grid function values must be finite")
        if not self.hi > self.lo:
            raise ValueError(f"Empty domain [{self.lo}, {self.hi}]")
        values.setflags(write=False)
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, func, lo: float, hi: float, n_nodes: int):
        nodes = np.linspace(lo, hi, n_nodes)
        return cls(lo, hi, np.asarray(func(nodes), dtype=float))

    @property
    def n_nodes(self) -> int:
        return self.values.size

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / (self.n_nodes - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = np.linspace(self.lo, self.hi, self.n_nodes)
        nodes.setflags(write=False)
        return nodes

    @cached_property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / self.step

    def contains(self, x: float) -> bool:
        tol = DOMAIN_TOL * max(1.0, self.hi - self.lo)
        return self.lo - tol <= x <= self.hi + tol

    def __call__(self, x):
        """Evaluate the interpolant; points outside the domain raise PointOutsideDomain"""
        arr = np.asarray(x, dtype=float)
        tol = DOMAIN_TOL * max(1.0, self.hi - self.lo)
        if np.any(arr < self.lo - tol) or np.any(arr > self.hi + tol):
            raise PointOutsideDomain(f"Point(s) outside [{self.lo}, {self.hi}]")
        result = np.interp(arr, self.nodes, self.values)
        return float(result) if np.ndim(result) == 0 else result

    def least_argmax(self, z: float = 0.0) -> float:
        """Smallest node maximizing values - z * node"""
        objective = self.values - z * self.nodes
        best = objective.max()
        tol = SLOPE_TIE_TOL * max(1.0, abs(best))
        return float(self.nodes[int(np.argmax(objective >= best - tol))])

    def _slope_slack(self, tol: float) -> float:
        # Rounding of the values is amplified by 1 / step in the chord slopes
        scale = max(1.0, float(np.abs(self.slopes).max()))
        noise = 8.0 * np.finfo(float).eps * max(1.0, float(np.abs(self.values).max())) / self.step
        return tol * scale + noise

    def is_concave(self, tol: float = CONCAVITY_TOL) -> bool:
        if self.n_nodes < 3:
            return True
        return bool(np.all(np.diff(self.slopes) <= self._slope_slack(tol)))

    def is_convex(self, tol: float = CONCAVITY_TOL) -> bool:
        if self.n_nodes < 3:
            return True
        return bool(np.all(np.diff(self.slopes) >= -self._slope_slack(tol)))


@dataclass(frozen=True)
class SuperdiffInterval:
    """Superdifferential [lower, upper] of a concave function at a point"""

    lower: float
    upper: float

    def __post_init__(self):
        if self.upper < self.lower:
            raise ValueError(f"Empty superdifferential [{self.lower}, {self.upper}]")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def is_kink(self, tol: float = 1e-9) -> bool:
        scale = max(1.0, abs(self.lower), abs(self.upper)) if np.isfinite(self.width) else 1.0
        return not np.isfinite(self.width) or self.width > tol * scale

    def negated(self) -> "SuperdiffInterval":
        """Subdifferential of the negated (convex) function"""
        return SuperdiffInterval(-self.upper, -self.lower)


class ConcaveGridFunction(GridFunction):
    """Grid function whose successive chord slopes are non-increasing"""

    def __post_init__(self):
        super().__post_init__()
        if not self.is_concave():
            raise ValueError("Values are not concave on the grid")

    @cached_property
    def _vertices(self) -> Tuple[List[float], List[float], List[float]]:
        # Breakpoints where the slope drops; collinear nodes are merged
        slopes = self.slopes
        scale = max(1.0, float(np.abs(slopes).max()))
        drops = np.flatnonzero(slopes[:-1] - slopes[1:] > SLOPE_TIE_TOL * scale) + 1
        index = np.concatenate(([0], drops, [self.n_nodes - 1]))
        q = self.nodes[index]
        y = self.values[index]
        seg_slopes = np.diff(y) / np.diff(q)
        return q.tolist(), y.tolist(), (-seg_slopes).tolist()

    @property
    def vertices(self) -> Tuple[np.ndarray, np.ndarray]:
        q, y, _ = self._vertices
        return np.array(q), np.array(y)

    @property
    def segment_slopes(self) -> np.ndarray:
        return -np.array(self._vertices[2])

    def conjugate_at(self, z: float) -> float:
        """max_q (F(q) - z q), exact for the piecewise-linear function"""
        q, y, neg = self._vertices
        j = bisect_left(neg, -z)
        return y[j] - z * q[j]

    def conjugate_many(self, z) -> np.ndarray:
        q, y, neg = self._vertices
        j = np.searchsorted(np.array(neg), -np.asarray(z, dtype=float), side="left")
        return np.array(y)[j] - np.asarray(z, dtype=float) * np.array(q)[j]

    def demand(self, z: float) -> Tuple[float, float]:
        """argmax_q (F(q) - z q) as an interval [q_min, q_max]"""
        q, _, neg = self._vertices
        tol = SLOPE_TIE_TOL * max(1.0, abs(z))
        return q[bisect_left(neg, -z - tol)], q[bisect_right(neg, -z + tol)]

    def superdifferential(self, x: float) -> SuperdiffInterval:
        if not self.contains(x):
            raise PointOutsideDomain(f"{x} outside [{self.lo}, {self.hi}]")
        q, _, neg = self._vertices
        slopes = [-s for s in neg]
        tol = DOMAIN_TOL * max(1.0, self.hi - self.lo)
        j = bisect_left(q, x - tol)
        if j < len(q) and abs(q[j] - x) <= tol:
            right = slopes[j] if j < len(slopes) else -np.inf
            left = slopes[j - 1] if j > 0 else np.inf
            return SuperdiffInterval(right, left)
        s = slopes[j - 1]
        return SuperdiffInterval(s, s)


class ConvexGridFunction(GridFunction):
    """Grid function whose successive chord slopes are non-decreasing"""

    def __post_init__(self):
        super().__post_init__()
        if not self.is_convex():
            raise ValueError("Values are not convex on the grid")


def _as_grid(f) -> GridFunction:
    return f if isinstance(f, GridFunction) else f.samples


def _same_step(g1: GridFunction, g2: GridFunction) -> bool:
    return abs(g1.step - g2.step) <= 1e-12 * max(g1.step, g2.step)


def _merge_concave(g1: GridFunction, g2: GridFunction) -> GridFunction:
    # Minkowski sum of hypographs: sorted union of slopes on the common lattice
    slopes = np.sort(np.concatenate((g1.slopes, g2.slopes)))[::-1]
    values = g1.values[0] + g2.values[0] + np.concatenate(([0.0], np.cumsum(slopes) * g1.step))
    return GridFunction(0.0, g1.hi + g2.hi, values)


def _lattice_sup(g1: GridFunction, g2: GridFunction) -> GridFunction:
    if g2.n_nodes > g1.n_nodes:
        g1, g2 = g2, g1
    out = np.full(g1.n_nodes + g2.n_nodes - 1, -np.inf)
    for j, value in enumerate(g2.values):
        window = out[j:j + g1.n_nodes]
        np.maximum(window, g1.values + value, out=window)
    return GridFunction(0.0, g1.hi + g2.hi, out)


def _general_sup(g1: GridFunction, g2: GridFunction, out_nodes: int, chunk: int = 256) -> GridFunction:
    # The maximum over a split of a piecewise-linear sum sits on a breakpoint of
    # either summand, so enumerate both node sets against every output node
    grid = np.linspace(0.0, g1.hi + g2.hi, out_nodes)
    best = np.full(out_nodes, -np.inf)
    for first, second in ((g1, g2), (g2, g1)):
        for start in range(0, first.n_nodes, chunk):
            alphas = first.nodes[start:start + chunk]
            rest = grid[None, :] - alphas[:, None]
            feasible = (rest >= -DOMAIN_TOL) & (rest <= second.hi + DOMAIN_TOL)
            totals = first.values[start:start + chunk, None] + np.interp(rest, second.nodes, second.values)
            totals[~feasible] = -np.inf
            np.maximum(best, totals.max(axis=0), out=best)
    return GridFunction(0.0, g1.hi + g2.hi, best)


def sup_convolve(f1, f2, out_nodes: Optional[int] = None) -> GridFunction:
    """
    Pairwise sup-convolution (F(q) = max over a1 + a2 = q of f1(a1) + f2(a2))

    Args:
        f1, f2: Grid functions on [0, a1_max] and [0, a2_max]
        out_nodes: Output node count; defaults to the common lattice n1 + n2 - 1

    Returns:
        GridFunction on [0, a1_max + a2_max]
    """
    g1, g2 = _as_grid(f1), _as_grid(f2)
    lattice = g1.n_nodes + g2.n_nodes - 1
    if _same_step(g1, g2) and out_nodes in (None, lattice):
        # Merging slopes is exact only for truly concave operands
        if g1.is_concave(tol=0.0) and g2.is_concave(tol=0.0):
            return _merge_concave(g1, g2)
        return _lattice_sup(g1, g2)
    return _general_sup(g1, g2, out_nodes or lattice)


def partial_convolutions(fs: Sequence, out_nodes: Optional[int] = None) -> List[GridFunction]:
    """Left fold of sup_convolve, keeping every partial result"""
    if not fs:
        raise EmptyAgentList("At least one agent revenue is required")
    partials = [_as_grid(fs[0])]
    for f in fs[1:]:
        partials.append(sup_convolve(partials[-1], f, out_nodes))
    return partials


def inf_convolution(fs: Sequence, out_nodes: Optional[int] = None) -> GridFunction:
    """Cooperative revenue F of a community, built by folding agents left to right"""
    result = partial_convolutions(fs, out_nodes)[-1]
    logger.debug("Folded %d revenue functions into %d nodes", len(fs), result.n_nodes)
    return result


def concave_hull(F: GridFunction) -> ConcaveGridFunction:
    """Least concave majorant via the upper hull of the node set (monotone chain)"""
    if F.is_concave(tol=0.0):
        return ConcaveGridFunction(F.lo, F.hi, F.values)
    xs, ys = F.nodes.tolist(), F.values.tolist()
    hull: List[int] = []
    for k in range(len(xs)):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            cross = (xs[j] - xs[i]) * (ys[k] - ys[i]) - (ys[j] - ys[i]) * (xs[k] - xs[i])
            if cross < 0:
                break
            hull.pop()
        hull.append(k)
    values = np.interp(F.nodes, F.nodes[hull], F.values[hull])
    # Interpolation rounding must not push the hull below the samples
    values = np.maximum(values, F.values)
    return ConcaveGridFunction(F.lo, F.hi, values)


def _hull_of(F: GridFunction) -> ConcaveGridFunction:
    return F if isinstance(F, ConcaveGridFunction) else concave_hull(F)


def conjugate(F: GridFunction, z_domain: Tuple[float, float], n_nodes: int) -> ConvexGridFunction:
    """
    Conjugate F_hat(z) = max_q (F(q) - z q) sampled on a uniform z grid

    The maximum over the nodes of F is attained on the hull vertices, so F and its
    concave hull share the same conjugate.
    """
    hull = _hull_of(F)
    z = np.linspace(z_domain[0], z_domain[1], n_nodes)
    return ConvexGridFunction(z_domain[0], z_domain[1], hull.conjugate_many(z))


def concave_from_conjugate(F_hat: GridFunction, q_nodes) -> np.ndarray:
    """min_z (F_hat(z) + z q) over the z nodes; recovers the concave hull"""
    z = F_hat.nodes
    q = np.asarray(q_nodes, dtype=float)
    return np.min(F_hat.values[None, :] + z[None, :] * q[:, None], axis=1)


def superdifferential(F_hull: ConcaveGridFunction, q: float) -> SuperdiffInterval:
    return F_hull.superdifferential(q)


def demand_map(F_hull: ConcaveGridFunction, z: float) -> Tuple[float, float]:
    return F_hull.demand(z)


def agent_best_response(f, z: float) -> float:
    """Least intensity maximizing the after-tax profit f(u) - z u"""
    return _as_grid(f).least_argmax(z)


@dataclass(frozen=True)
class ChatterTriple:
    p1: float
    p2: float
    kappa: float

    @property
    def is_degenerate(self) -> bool:
        return self.p1 == self.p2

    def mean(self) -> float:
        return self.kappa * self.p1 + (1.0 - self.kappa) * self.p2


def chatter_decompose(F: GridFunction, F_hull: ConcaveGridFunction, p: float) -> ChatterTriple:
    """
    Split p into a two-point mix (p1, p2, kappa) realizing the hull value

    Returns (p, p, 1) where F already touches its hull, otherwise the endpoints of the
    affine hull segment containing p.
    """
    if not F.contains(p):
        raise PointOutsideDomain(f"{p} outside [{F.lo}, {F.hi}]")
    p = min(max(p, F.lo), F.hi)
    gap = F_hull(p) - F(p)
    if gap <= SLOPE_TIE_TOL * max(1.0, abs(F_hull(p))):
        return ChatterTriple(p, p, 1.0)
    q, _, _ = F_hull._vertices
    j = min(max(bisect_right(q, p) - 1, 0), len(q) - 2)
    p1, p2 = q[j], q[j + 1]
    return ChatterTriple(p1, p2, (p2 - p) / (p2 - p1))


def best_split(partial: GridFunction, f, q: float) -> Tuple[float, float]:
    """
    Best split of q between one agent and the rest of the community

    Returns:
        (value, share of the agent); among maximizers the agent takes the smallest
        share
    """
    g = _as_grid(f)
    lo_share = max(0.0, q - partial.hi)
    hi_share = min(g.hi, q)
    if hi_share < lo_share - DOMAIN_TOL:
        raise PointOutsideDomain(f"{q} cannot be split")
    hi_share = max(hi_share, lo_share)
    shares = np.concatenate((
        g.nodes[(g.nodes >= lo_share) & (g.nodes <= hi_share)],
        q - partial.nodes[(q - partial.nodes >= lo_share) & (q - partial.nodes <= hi_share)],
        [lo_share, hi_share],
    ))
    shares = np.clip(shares, lo_share, hi_share)
    totals = np.interp(q - shares, partial.nodes, partial.values) + np.interp(shares, g.nodes, g.values)
    best = totals.max()
    tol = SLOPE_TIE_TOL * max(1.0, abs(best))
    return float(best), float(shares[totals >= best - tol].min())


def suffix_convolutions(fs: Sequence, out_nodes: Optional[int] = None) -> List[GridFunction]:
    """suffixes[k] is the sup-convolution of fs[k:], folded from the right"""
    if not fs:
        raise EmptyAgentList("At least one agent revenue is required")
    suffixes = [_as_grid(fs[-1])]
    for f in reversed(fs[:-1]):
        suffixes.append(sup_convolve(f, suffixes[-1], out_nodes))
    return suffixes[::-1]


def split_intensity(q: float, fs: Sequence, out_nodes: Optional[int] = None) -> Tuple[float, ...]:
    """
    Per-agent intensities attaining F(q); the least-lexicographic split among ties

    Agents are assigned front to back, each the smallest share with which the
    remaining agents can still reach F(q).
    """
    suffixes = suffix_convolutions(fs, out_nodes)
    if not suffixes[0].contains(q):
        raise PointOutsideDomain(f"{q} outside [0, {suffixes[0].hi}]")
    remaining = min(max(q, 0.0), suffixes[0].hi)
    shares = []
    for k in range(len(fs) - 1):
        _, share = best_split(suffixes[k + 1], fs[k], remaining)
        shares.append(share)
        remaining = max(remaining - share, 0.0)
    shares.append(remaining)
    return tuple(shares)
