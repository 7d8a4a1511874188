"""Distances between trajectories, jump matching and small-ball estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .partitions import PartitionSequence
from .paths import ClassSpec, Trajectory, generate_trajectory, path_seeds

METRICS = ("uniform", "skorohod")


def _same_horizon(x: Trajectory, y: Trajectory) -> None:
    if abs(x.T - y.T) > 1e-12 * max(x.T, y.T):
        raise InvalidArgument(f"horizons differ: {x.T} vs {y.T}")


def _sup_gap(x: Trajectory, y: Trajectory, pts: np.ndarray, log_space: bool) -> float:
    a = np.concatenate((x.values(pts), x.values(pts, "left")))
    b = np.concatenate((y.values(pts), y.values(pts, "left")))
    if log_space:
        a, b = np.log(a), np.log(b)
    return float(np.max(np.abs(a - b)))


def uniform_distance(x: Trajectory, y: Trajectory, log_space: bool = False) -> float:
    """``sup_t |x(t) - y(t)|`` over both grids and jump sets, left and right values."""
    _same_horizon(x, y)
    if not x.n_jumps and not y.n_jumps and (x.grid is y.grid or np.array_equal(x.grid, y.grid)):
        # shared grid, no jumps: both paths are determined by their node values
        if log_space:
            a, b = x.log_node_values(), y.log_node_values()
        else:
            a, b = x.node_values(), y.node_values()
        return float(np.max(np.abs(a - b)))
    pts = np.union1d(x.breakpoints(), y.breakpoints())
    return _sup_gap(x, y, pts, log_space)


# ---------------------------------------------------------------------------
# Skorohod


@dataclass(frozen=True)
class WarpResult:
    distance: float
    pairs: tuple  # ((i, j), ...) indices into x and y jump lists
    time_shift: float
    value_gap: float


def warp_distance(x: Trajectory, y: Trajectory, pairs: Sequence[tuple[int, int]], log_space: bool = False) -> WarpResult:
    """Distance under the polygonal warp sending ``x``'s jump ``i`` to ``y``'s jump ``j``."""
    T = x.T
    if pairs:
        src = np.array([x.jump_times[i] for i, _ in pairs])
        dst = np.array([y.jump_times[j] for _, j in pairs])
        if np.any(np.diff(src) <= 0) or np.any(np.diff(dst) <= 0):
            raise InvalidArgument("pairing must be order-preserving")
        kx = np.concatenate(([0.0], src, [T]))
        ky = np.concatenate(([0.0], dst, [T]))
        shift = float(np.max(np.abs(src - dst)))
    else:
        kx = ky = np.array([0.0, T])
        shift = 0.0
    back = np.interp(y.breakpoints(), ky, kx)
    pts = np.union1d(x.breakpoints(), back)
    warped = np.interp(pts, kx, ky)
    # knots must land exactly on the paired jump times
    idx = np.searchsorted(pts, kx)
    warped[idx] = ky
    a = np.concatenate((x.values(pts), x.values(pts, "left")))
    b = np.concatenate((y.values(warped), y.values(warped, "left")))
    if log_space:
        a, b = np.log(a), np.log(b)
    gap = float(np.max(np.abs(a - b)))
    return WarpResult(max(shift, gap), tuple(pairs), shift, gap)


class _Segments:
    """Sup-gap of ``x`` against ``y`` warped linearly between two knots.

    Knots are indexed ``0`` (time 0), ``1..m`` (jump times) and ``m+1`` (T).
    """

    def __init__(self, x: Trajectory, y: Trajectory, log_space: bool):
        self.x, self.y = x, y
        self.tx = np.log if log_space else (lambda v: v)
        tx = self.tx
        self.bx, self.by = x.breakpoints(), y.breakpoints()
        self.xr, self.xl = map(tx, x.values_lr(self.bx))
        self.yr, self.yl = map(tx, y.values_lr(self.by))
        self.sx = np.concatenate(([0.0], x.jump_times, [x.T]))
        self.sy = np.concatenate(([0.0], y.jump_times, [y.T]))
        self.kxr, self.kxl = map(tx, x.values_lr(self.sx))
        self.kyr, self.kyl = map(tx, y.values_lr(self.sy))

    def lower(self, i: int, j: int, i2: int, j2: int) -> float:
        """Cheap lower bound on ``gap`` from the knot values alone."""
        return max(abs(self.kxr[i] - self.kyr[j]), abs(self.kxl[i2] - self.kyl[j2]))

    def gap(self, i: int, j: int, i2: int, j2: int) -> float:
        """Warp sends knot ``i -> j`` and ``i2 -> j2``; right values at the
        first knot, left values at the second."""
        a, b, a2, b2 = self.sx[i], self.sx[i2], self.sy[j], self.sy[j2]
        scale = (b2 - a2) / (b - a)
        tx = self.tx
        ends = max(abs(self.kxr[i] - self.kyr[j]), abs(self.kxl[i2] - self.kyl[j2]))
        # interior x breakpoints, with y read at the warped time
        i0, i1 = np.searchsorted(self.bx, (a, b))
        i0 += 1
        if i1 > i0:
            yr, yl = self.y.values_lr(a2 + (self.bx[i0:i1] - a) * scale)
            ends = max(ends, np.max(np.abs(self.xr[i0:i1] - tx(yr))), np.max(np.abs(self.xl[i0:i1] - tx(yl))))
        j0, j1 = np.searchsorted(self.by, (a2, b2))
        j0 += 1
        if j1 > j0:
            xr, xl = self.x.values_lr(a + (self.by[j0:j1] - a2) / scale)
            ends = max(ends, np.max(np.abs(self.yr[j0:j1] - tx(xr))), np.max(np.abs(self.yl[j0:j1] - tx(xl))))
        return float(ends)


def skorohod_search(x: Trajectory, y: Trajectory, log_space: bool = False, cap: float = math.inf) -> WarpResult:
    """Best polygonal warp over all order-preserving jump pairings.

    Between consecutive knots the warp is linear, so the sup-gap on that
    stretch depends only on the two knots; the optimum is a minimax path
    through the grid of candidate pairs, solved by dynamic programming.
    With a finite ``cap`` the search stops refining once the answer is known
    to be at least ``cap`` and then returns ``cap`` with no pairing.
    """
    _same_horizon(x, y)
    seg = _Segments(x, y, log_space)
    sx, sy = seg.sx, seg.sy
    m, k = x.n_jumps, y.n_jumps
    # best[(i, j)] = (bottleneck, shift, gap, predecessor); (0, 0) is the origin
    best: dict = {(0, 0): (0.0, 0.0, 0.0, None)}
    end = (float(cap), math.nan, math.nan, None)

    for i in range(m + 1):
        for j in range(k + 1):
            node = (i, j)
            if node not in best or best[node][0] >= end[0]:
                continue
            b0, sh0, gp0, _ = best[node]
            if seg.lower(i, j, m + 1, k + 1) < end[0]:
                g = seg.gap(i, j, m + 1, k + 1)
                if max(b0, g) < end[0]:
                    end = (max(b0, g), sh0, max(gp0, g), node)
            for i2 in range(i + 1, m + 1):
                for j2 in range(j + 1, k + 1):
                    val = max(abs(sx[i2] - sy[j2]), b0)
                    prev = best.get((i2, j2))
                    if val >= end[0] or (prev is not None and prev[0] <= val):
                        continue
                    if max(val, seg.lower(i, j, i2, j2)) >= end[0]:
                        continue
                    g = seg.gap(i, j, i2, j2)
                    val = max(val, g)
                    if prev is None or val < prev[0]:
                        best[(i2, j2)] = (val, max(sh0, abs(sx[i2] - sy[j2])), max(gp0, g), node)
    dist, shift, gap, node = end
    if node is None:
        return WarpResult(float(cap), (), math.nan, math.nan)
    pairs = []
    while node != (0, 0):
        pairs.append((node[0] - 1, node[1] - 1))
        node = best[node][3]
    return WarpResult(float(dist), tuple(reversed(pairs)), float(shift), float(gap))


def skorohod_distance(x: Trajectory, y: Trajectory, log_space: bool = False) -> float:
    """J1 distance restricted to polygonal warps through jump pairings.

    The identity warp is always a candidate, so the result never exceeds the
    uniform distance. With unequal jump counts it is an upper bound.
    """
    return skorohod_search(x, y, log_space).distance


def distance(x: Trajectory, y: Trajectory, metric: str, log_space: bool = False, cap: float = math.inf) -> float:
    """Distance under ``metric``; Skorohod values at or above ``cap`` come back as ``cap``."""
    if metric == "uniform":
        return uniform_distance(x, y, log_space)
    if metric == "skorohod":
        return skorohod_search(x, y, log_space, cap).distance
    raise InvalidArgument(f"unknown metric {metric!r}")


def pairwise_distances(bundle: Sequence[Trajectory], metric: str = "skorohod", closure: bool = True,
                       log_space: bool = False) -> np.ndarray:
    """Symmetric distance matrix over a bundle.

    Composing two warps gives a warp, so ``d(x, y) + d(y, z)`` bounds the
    J1 distance of ``(x, z)`` from above. With ``closure`` the Skorohod matrix
    is tightened by shortest paths; every entry stays a valid upper bound
    and the triangle inequality then holds exactly.
    """
    n = len(bundle)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = distance(bundle[i], bundle[j], metric, log_space)
    if closure and metric == "skorohod":
        for k in range(n):
            D = np.minimum(D, D[:, k : k + 1] + D[k : k + 1, :])
    return D


# ---------------------------------------------------------------------------
# jump matching


@dataclass(frozen=True)
class JumpMatch:
    pairing: tuple  # ((index, s_i, s_i'), ...) with 1-based index
    max_time_shift: float
    max_size_gap: float
    distance: float


def relative_jump_floor(*paths: Trajectory) -> float:
    """Smallest relative jump ``|factor - 1|`` over all given paths."""
    rel = [np.abs(p.jump_factors - 1.0) for p in paths if p.n_jumps]
    return float(np.min(np.concatenate(rel))) if rel else math.inf


def match_radius(x: Trajectory, y: Trajectory) -> float:
    """Largest epsilon for which nearby paths must pair their jumps in order."""
    h = relative_jump_floor(x, y)
    x_min = min(x.minimum(), y.minimum())
    if math.isinf(h):
        return math.inf
    return x_min * h / (2.0 * (h + 2.0))


def match_jumps(x: Trajectory, y: Trajectory, epsilon: float) -> JumpMatch | None:
    """Order-preserving jump pairing when ``x`` and ``y`` are epsilon-close.

    Returns ``None`` unless the in-order warp distance is below ``epsilon``,
    ``epsilon`` is inside the matching radius and every size gap is below
    ``2 * epsilon``.
    """
    if not epsilon > 0:
        raise InvalidArgument("epsilon must be positive")
    _same_horizon(x, y)
    if x.minimum() <= 0 or y.minimum() <= 0:
        raise InvalidArgument("paths must be strictly positive")
    if x.n_jumps != y.n_jumps or not epsilon < match_radius(x, y):
        return None
    pairs = tuple((i, i) for i in range(x.n_jumps))
    res = warp_distance(x, y, pairs)
    if not res.distance < epsilon:
        return None
    gaps = np.abs(x.jump_sizes() - y.jump_sizes())
    if gaps.size and not np.all(gaps < 2 * epsilon):
        return None
    pairing = tuple((i + 1, float(x.jump_times[i]), float(y.jump_times[i])) for i in range(x.n_jumps))
    return JumpMatch(pairing, res.time_shift, float(gaps.max()) if gaps.size else 0.0, res.distance)


# ---------------------------------------------------------------------------
# small-ball Monte Carlo

_Z95 = NormalDist().inv_cdf(0.975)


def wilson_lower_bound(hits: int, n: int, z: float = _Z95) -> float:
    if n <= 0:
        raise InvalidArgument("n must be positive")
    p = hits / n
    denom = 1 + z * z / n
    centre = p + z * z / (2 * n)
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return max(0.0, (centre - half) / denom)


@dataclass(frozen=True)
class SmallBallEstimate:
    target: Trajectory
    epsilon: float
    metric: str
    n_samples: int
    hits: int
    hit_fraction: float
    wilson_lower_bound: float
    target_id: str = ""

    @property
    def standard_error(self) -> float:
        p = self.hit_fraction
        return math.sqrt(p * (1 - p) / self.n_samples)

    def csv_row(self) -> list:
        return [self.target_id or self.target.label, self.metric, self.epsilon, self.n_samples,
                self.hits, self.hit_fraction, self.wilson_lower_bound]


SMALL_BALL_HEADER = ["target_id", "metric", "epsilon", "n", "hits", "fraction", "wilson_lb"]


def sample_distances(target: Trajectory, spec: ClassSpec, partition: PartitionSequence, metric: str,
                     n_samples: int, seed: int, log_space: bool = False, cap: float = math.inf) -> np.ndarray:
    """Distances from ``n_samples`` class draws to ``target`` (Skorohod values clipped at ``cap``)."""
    if metric not in METRICS:
        raise InvalidArgument(f"unknown metric {metric!r}")
    if n_samples < 1:
        raise InvalidArgument("n_samples must be at least 1")
    out = np.empty(n_samples)
    for k, s in enumerate(path_seeds(seed, n_samples)):
        out[k] = distance(generate_trajectory(spec, partition, s), target, metric, log_space, cap)
    return out


def estimate_from_distances(target: Trajectory, dists: np.ndarray, epsilon: float, metric: str,
                            target_id: str = "") -> SmallBallEstimate:
    if not epsilon > 0:
        raise InvalidArgument("epsilon must be positive")
    n = int(dists.size)
    hits = int(np.count_nonzero(dists < epsilon))
    return SmallBallEstimate(target, float(epsilon), metric, n, hits, hits / n,
                             wilson_lower_bound(hits, n), target_id)


def small_ball_estimate(target: Trajectory, spec: ClassSpec, metric: str, epsilon: float, n_samples: int,
                        seed: int, partition: PartitionSequence, log_space: bool = False,
                        target_id: str = "") -> SmallBallEstimate:
    """Fraction of generated paths strictly within ``epsilon`` of ``target``.

    ``log_space`` measures distances between ``log x`` and ``log target``.
    """
    if not epsilon > 0:
        raise InvalidArgument("epsilon must be positive")
    dists = sample_distances(target, spec, partition, metric, n_samples, seed, log_space, cap=epsilon)
    return estimate_from_distances(target, dists, epsilon, metric, target_id)


def small_ball_grid(target: Trajectory, spec: ClassSpec, metric: str, epsilons: Sequence[float], n_samples: int,
                    seed: int, partition: PartitionSequence, log_space: bool = False,
                    target_id: str = "") -> list[SmallBallEstimate]:
    """Estimates for several radii from one shared sample."""
    cap = max(epsilons)
    dists = sample_distances(target, spec, partition, metric, n_samples, seed, log_space, cap)
    return [estimate_from_distances(target, dists, e, metric, target_id) for e in epsilons]
