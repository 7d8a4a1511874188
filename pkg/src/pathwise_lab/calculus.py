"""Pathwise Föllmer integration, quadratic variation and Itô-Föllmer checks.

All sums run over the cells ``[t_i, t_{i+1}]`` of one partition level with
``t_i < t``; the last cell is clipped at ``t`` so every level telescopes to
``x(t) - x(0)`` for a constant integrand. At ``t = T`` this is the same sum
as the improper limit evaluated at the cutoff ``T - mesh(n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgument, PredictabilityError
from .partitions import PartitionSequence
from .paths import Trajectory


@dataclass(frozen=True)
class ConvergenceTable:
    levels: tuple[int, ...]
    values: tuple[float, ...]
    cauchy_gaps: tuple[float, ...]  # first entry is nan
    tol: float
    converged: bool
    limit: float | None

    def rows(self):
        return list(zip(self.levels, self.values, self.cauchy_gaps))


def convergence_table(levels: Sequence[int], values: Sequence[float], tol: float) -> ConvergenceTable:
    levels = tuple(int(n) for n in levels)
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise InvalidArgument("levels must be strictly increasing")
    values = tuple(float(v) for v in values)
    gaps = (math.nan,) + tuple(abs(b - a) for a, b in zip(values, values[1:]))
    ok = len(values) >= 2 and math.isfinite(gaps[-1]) and gaps[-1] <= tol
    return ConvergenceTable(levels, values, gaps, float(tol), ok, values[-1] if ok else None)


@dataclass(frozen=True)
class QVDecomposition:
    times: np.ndarray
    total: np.ndarray
    continuous_part: np.ndarray
    atomic_part: np.ndarray
    level: int


# ---------------------------------------------------------------------------
# integrands


class PathFunctional:
    """A vectorized predictable integrand ``y(t_i, x)``.

    ``evaluate(x, times)`` returns one value per node and may use ``x`` on
    ``[0, t_i]`` only. Subclasses are trusted; plain callables go through
    :class:`PastView` instead.
    """

    def evaluate(self, x: Trajectory, times: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __add__(self, other):
        return LinearCombination(((1.0, self), (1.0, as_functional(other))))

    def __rmul__(self, c):
        return LinearCombination(((float(c), self),))


@dataclass(frozen=True)
class Constant(PathFunctional):
    c: float

    def evaluate(self, x, times):
        return np.full(np.shape(times), float(self.c))


@dataclass(frozen=True)
class Markov(PathFunctional):
    """``y(t, x) = f(t, x(t))`` with ``f`` vectorized over numpy arrays."""

    f: Callable

    def evaluate(self, x, times):
        return np.asarray(self.f(times, x.values(times)), dtype=float) * np.ones(np.shape(times))


@dataclass(frozen=True)
class LinearCombination(PathFunctional):
    terms: tuple

    def evaluate(self, x, times):
        out = np.zeros(np.shape(times))
        for c, fn in self.terms:
            out = out + c * fn.evaluate(x, times)
        return out


class PastView:
    """Read-only view of a trajectory that refuses to look past ``now``."""

    def __init__(self, x: Trajectory, now: float):
        self._x = x
        self.now = float(now)
        self.x0 = x.x0

    def _check(self, t):
        if np.any(np.asarray(t) > self.now):
            raise PredictabilityError(f"integrand read x at {np.max(t)} > current time {self.now}")

    def __call__(self, t, side: str = "right"):
        self._check(t)
        return self._x.values(t, side)

    def left(self, t):
        self._check(t)
        return self._x.values(t, "left")

    def current(self) -> float:
        return float(self._x.values(self.now))

    def past(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints in ``[0, now]`` and the path values there."""
        pts = self._x.breakpoints()
        pts = np.append(pts[pts < self.now], self.now)
        return pts, self._x.values(pts)


@dataclass(frozen=True)
class GuardedCallable(PathFunctional):
    fn: Callable

    def evaluate(self, x, times):
        return np.array([float(self.fn(float(t), PastView(x, t))) for t in times])


def as_functional(y) -> PathFunctional:
    if isinstance(y, PathFunctional):
        return y
    if isinstance(y, (int, float)):
        return Constant(float(y))
    if callable(y):
        return GuardedCallable(y)
    raise InvalidArgument(f"cannot use {y!r} as an integrand")


# ---------------------------------------------------------------------------
# sums


def _cells(p: PartitionSequence, n: int, t: float) -> tuple[np.ndarray, np.ndarray]:
    nodes = p.grid(n)
    left = nodes[:-1][nodes[:-1] < t]
    right = np.minimum(nodes[1 : left.size + 1], t)
    return left, right


def _check_time(x: Trajectory, p: PartitionSequence, t: float | None) -> float:
    if abs(x.T - p.T) > 1e-12 * p.T:
        raise InvalidArgument("trajectory and partition horizons differ")
    t = p.T if t is None else float(t)
    if not 0 < t <= p.T:
        raise InvalidArgument(f"t={t} outside (0, T]")
    return t


def follmer_sum(integrand, x: Trajectory, p: PartitionSequence, level: int, t: float | None = None) -> float:
    """Left-point Föllmer sum at one partition level."""
    t = _check_time(x, p, t)
    y = as_functional(integrand)
    left, right = _cells(p, level, t)
    dx = x.values(right) - x.values(left)
    return math.fsum(y.evaluate(x, left) * dx)


def follmer_integral(integrand, x: Trajectory, p: PartitionSequence, t: float | None = None,
                     tol: float = 1e-6, levels: Sequence[int] | None = None) -> ConvergenceTable:
    """Föllmer sums over increasing levels, with a Cauchy test on the last gap.

    Divergence is reported through ``converged=False``, never raised.
    """
    levels = list(range(1, p.max_level + 1)) if levels is None else list(levels)
    values = [follmer_sum(integrand, x, p, n, t) for n in levels]
    return convergence_table(levels, values, tol)


def _qv_at(x: Trajectory, p: PartitionSequence, level: int, times: np.ndarray) -> np.ndarray:
    nodes = p.grid(level)
    xv = x.values(nodes)
    cum = np.concatenate(([0.0], np.cumsum(np.diff(xv) ** 2)))
    # index of the last node strictly before t (t = 0 contributes nothing)
    j = np.searchsorted(nodes, times, side="left") - 1
    out = np.zeros(times.shape)
    pos = j >= 0
    jj = j[pos]
    out[pos] = cum[jj] + (x.values(times[pos]) - xv[jj]) ** 2
    return out


def atomic_qv(x: Trajectory, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if not x.n_jumps:
        return np.zeros(times.shape)
    cum = np.concatenate(([0.0], np.cumsum(x.jump_sizes() ** 2)))
    return cum[np.searchsorted(x.jump_times, times, side="right")]


def quadratic_variation(x: Trajectory, p: PartitionSequence, eval_times, level: int | None = None) -> QVDecomposition:
    """Split the level-``level`` realized QV into continuous and jump parts.

    The jump part is the exact sum of squared stored jumps; the continuous
    part is the remainder.
    """
    _check_time(x, p, None)
    level = p.max_level if level is None else level
    times = np.atleast_1d(np.asarray(eval_times, dtype=float))
    if np.any(times < 0) or np.any(times > p.T):
        raise InvalidArgument("evaluation times must lie in [0, T]")
    total = _qv_at(x, p, level, times)
    atomic = atomic_qv(x, times)
    return QVDecomposition(times, total, total - atomic, atomic, level)


def sigma2_x2_integral(x: Trajectory, times, sigma: float | None = None) -> np.ndarray:
    """Trapezoid value of ``int_0^t sigma^2 x(s-)^2 ds`` on the master grid."""
    sigma = x.sigma if sigma is None else sigma
    times = np.atleast_1d(np.asarray(times, dtype=float))
    pts = x.breakpoints()
    left = x.values(pts, "left")
    right = x.values(pts)
    # across a cell use the right value at its start and the left value at its end
    seg = 0.5 * (right[:-1] ** 2 + left[1:] ** 2) * np.diff(pts)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    out = np.interp(times, pts, cum)
    return sigma**2 * out


# ---------------------------------------------------------------------------
# Itô-Föllmer formula


@dataclass(frozen=True)
class SmoothFunction:
    """``f(t, x, y1..ym)`` with the partial derivatives the formula needs.

    All callables take ``(t, x, ys)`` with ``ys`` a tuple of arrays and must
    broadcast over numpy arrays. ``dy`` lists one derivative per ``y``.
    """

    f: Callable
    dt: Callable
    dx: Callable
    dxx: Callable
    dy: tuple = ()


def power_function(k: float) -> SmoothFunction:
    """``f(x) = x**k``."""
    return SmoothFunction(
        f=lambda t, x, ys: x**k,
        dt=lambda t, x, ys: np.zeros_like(x),
        dx=lambda t, x, ys: k * x ** (k - 1),
        dxx=lambda t, x, ys: k * (k - 1) * x ** (k - 2),
    )


def ito_follmer_terms(f: SmoothFunction, x: Trajectory, hindsight: Sequence, p: PartitionSequence,
                      level: int, qv_level: int | None = None, t: float | None = None) -> dict:
    """Left side and each right-side term of the Itô-Föllmer formula on ``[0, t]``.

    Integrals are left-point sums at ``level``; the continuous QV measure is
    read from the finer ``qv_level`` grid (default: the partition's finest).
    """
    t = _check_time(x, p, t)
    qv_level = p.max_level if qv_level is None else qv_level
    if qv_level < level:
        raise InvalidArgument("qv_level must not be coarser than level")
    if len(f.dy) != len(hindsight):
        raise InvalidArgument("one y-derivative is needed per hindsight functional")
    left, right = _cells(p, level, t)
    nodes = np.append(left, right[-1])
    xv = x.values(nodes)
    ys = tuple(g.running(x, nodes) for g in hindsight)
    y_left = tuple(v[:-1] for v in ys)
    xl = xv[:-1]
    tl = nodes[:-1]
    dt = np.diff(nodes)
    dx = np.diff(xv)

    cont = quadratic_variation(x, p, nodes, level=qv_level).continuous_part
    dqv = np.diff(cont)

    lhs = float(f.f(nodes[-1], xv[-1], tuple(v[-1] for v in ys)) - f.f(nodes[0], xv[0], tuple(v[0] for v in ys)))
    time_term = math.fsum(f.dt(tl, xl, y_left) * dt)
    follmer_term = math.fsum(f.dx(tl, xl, y_left) * dx)
    qv_term = 0.5 * math.fsum(f.dxx(tl, xl, y_left) * dqv)
    y_term = math.fsum(
        math.fsum(d(tl, xl, y_left) * np.diff(v)) for d, v in zip(f.dy, ys)
    )
    jump_term = 0.0
    if x.n_jumps:
        s = x.jump_times[x.jump_times <= t]
        if s.size:
            xs, xs_ = x.values(s), x.values(s, "left")
            yr = tuple(g.running(x, s) for g in hindsight)
            yl = tuple(g.running(x, s, side="left") for g in hindsight)
            corr = f.f(s, xs, yr) - f.f(s, xs_, yl) - f.dx(s, xs_, yl) * (xs - xs_)
            for d, a, b in zip(f.dy, yr, yl):
                corr = corr - d(s, xs_, yl) * (a - b)
            jump_term = math.fsum(np.atleast_1d(corr))
    rhs = time_term + follmer_term + qv_term + y_term + jump_term
    return {
        "lhs": lhs,
        "time": time_term,
        "follmer": follmer_term,
        "qv": qv_term,
        "hindsight": y_term,
        "jumps": jump_term,
        "rhs": rhs,
    }


def ito_follmer_residual(f: SmoothFunction, x: Trajectory, hindsight: Sequence, p: PartitionSequence,
                         level: int, qv_level: int | None = None, t: float | None = None) -> float:
    """``|LHS - RHS|`` of the Itô-Föllmer formula discretized at ``level``."""
    terms = ito_follmer_terms(f, x, hindsight, p, level, qv_level, t)
    return abs(terms["lhs"] - terms["rhs"])


def composition_qv(f: Callable, fprime: Callable, x: Trajectory, p: PartitionSequence, level: int,
                   qv_level: int | None = None) -> tuple[float, float]:
    """Realized QV of ``f(x)`` at ``level`` and ``int f'(x)^2 d<x>`` on the fine grid.

    For continuous ``x`` and ``f`` in C^1 the two agree in the limit.
    """
    qv_level = p.max_level if qv_level is None else qv_level
    coarse = f(x.values(p.grid(level)))
    lhs = math.fsum(np.diff(coarse) ** 2)
    fine = p.grid(qv_level)
    xv = x.values(fine)
    dqv = np.diff(quadratic_variation(x, p, fine, level=qv_level).continuous_part)
    rhs = math.fsum(fprime(xv[:-1]) ** 2 * dqv)
    return lhs, rhs
