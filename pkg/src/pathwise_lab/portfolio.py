"""NP-portfolios: strategies, hindsight factors, value rollout and checks.

Every strategy exposes two views of its stock holding ``phi``:

* ``phi(t, x)`` is the left-continuous holding at time ``t``; it may read
  ``x`` on ``[0, t)`` and ``x(t-)`` only.
* ``holdings(x, times)`` is the holding carried over the cell that starts
  at each node, i.e. the right limit ``phi(t_i+)``, which may also read
  ``x(t_i)``. The discrete rollout uses this view.

The bond position ``psi`` is never specified; it follows from the
self-financing identity ``psi = V - phi * x``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .calculus import follmer_sum, PathFunctional
from .errors import InvalidArgument, PredictabilityError
from .partitions import PartitionSequence
from .paths import Trajectory, splice


# ---------------------------------------------------------------------------
# hindsight factors

HINDSIGHT_KINDS = ("running_min", "running_max", "running_average")


@dataclass(frozen=True)
class HindsightFactor:
    kind: str

    def __post_init__(self):
        if self.kind not in HINDSIGHT_KINDS:
            raise InvalidArgument(f"unknown hindsight factor {self.kind!r}")

    def running(self, x: Trajectory, times, side: str = "right") -> np.ndarray:
        """Factor value at each time; ``side="left"`` excludes a jump at that time."""
        times = np.asarray(times, dtype=float)
        scalar = times.ndim == 0
        times = np.atleast_1d(times)
        if np.any(times < 0) or np.any(times > x.T):
            raise InvalidArgument("hindsight times must lie in [0, T]")
        pts = x.breakpoints()
        vr, vl = x.values(pts), x.values(pts, "left")
        # last breakpoint strictly before t; the path is monotone inside master cells
        k = np.searchsorted(pts, times, side="left") - 1
        at_left = x.values(times, "left")
        at = x.values(times) if side == "right" else at_left
        if self.kind == "running_average":
            seg = 0.5 * (vr[:-1] + vl[1:]) * np.diff(pts)
            cum = np.concatenate(([0.0], np.cumsum(seg)))
            kk = np.maximum(k, 0)
            area = cum[kk] + 0.5 * (vr[kk] + at_left) * (times - pts[kk])
            out = np.where(times > 0, area / np.where(times > 0, times, 1.0), x.x0)
        else:
            red = np.minimum if self.kind == "running_min" else np.maximum
            acc = red.accumulate(red(vr, vl))
            prior = np.where(k >= 0, acc[np.maximum(k, 0)], at_left)
            out = red(red(prior, at_left), at)
        return out[0] if scalar else out


def hindsight_eval(factor: HindsightFactor | str, x: Trajectory, t: float) -> float:
    """Running min, max or average of ``x`` over ``[0, t]``."""
    if isinstance(factor, str):
        factor = HindsightFactor(factor)
    if not 0 <= t <= x.T:
        raise InvalidArgument(f"t={t} outside [0, {x.T}]")
    return float(factor.running(x, t))


# ---------------------------------------------------------------------------
# strategies


@dataclass(frozen=True)
class Portfolio:
    """Base strategy: initial value, interest rate, admissibility floor.

    ``bond_offset`` adds a fixed number of bond units on top of the
    self-financing ``psi``; it exists to exercise the residual check.
    """

    V0: float
    r: float = 0.0
    floor: float = 0.0
    bond_offset: float = 0.0

    kind = "base"

    def __post_init__(self):
        if self.r < 0:
            raise InvalidArgument("interest rate must be non-negative")
        if self.floor < 0:
            raise InvalidArgument("admissibility floor A must be non-negative")

    def phi(self, t: float, x: Trajectory) -> float:
        raise NotImplementedError

    def holdings(self, x: Trajectory, times: np.ndarray) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantHolding(Portfolio):
    """Hold ``units`` shares throughout (``0`` is all cash, ``1`` buy-and-hold)."""

    units: float = 0.0
    kind = "smooth"

    def phi(self, t, x):
        return float(self.units)

    def holdings(self, x, times):
        return np.full(np.shape(times), float(self.units))


@dataclass(frozen=True)
class SmoothStrategy(Portfolio):
    """``phi(t) = G(t, x(t-), g_1(t-), ..., g_m(t-))`` with hindsight factors ``g``.

    ``G(t, x, ys)`` must broadcast over numpy arrays.
    """

    G: Callable = None
    hindsight: tuple = ()
    kind = "smooth"

    def __post_init__(self):
        super().__post_init__()
        if self.G is None:
            raise InvalidArgument("smooth strategy needs G")
        object.__setattr__(self, "hindsight", tuple(
            HindsightFactor(h) if isinstance(h, str) else h for h in self.hindsight))

    def phi(self, t, x):
        ys = tuple(g.running(x, t, "left") for g in self.hindsight)
        return float(self.G(t, x.values(t, "left"), ys))

    def holdings(self, x, times):
        ys = tuple(g.running(x, times) for g in self.hindsight)
        return np.asarray(self.G(times, x.values(times), ys), dtype=float) * np.ones(np.shape(times))


@dataclass(frozen=True)
class SimpleStrategy(Portfolio):
    """``phi(t) = G_l(t, x(s_{l-1}))`` for ``t`` in ``(s_{l-1}, s_l]``.

    ``breakpoints`` is ``s_0 = 0 < s_1 < ... < s_L = T``; ``pieces`` holds
    one callable or constant per interval.
    """

    breakpoints: tuple = ()
    pieces: tuple = ()
    kind = "simple"

    def __post_init__(self):
        super().__post_init__()
        s = np.asarray(self.breakpoints, dtype=float)
        if s.size < 2 or s[0] != 0 or np.any(np.diff(s) <= 0):
            raise InvalidArgument("breakpoints must increase from 0 to T")
        if len(self.pieces) != s.size - 1:
            raise InvalidArgument("need one piece per interval")
        object.__setattr__(self, "breakpoints", tuple(float(v) for v in s))

    def _piece(self, l: int, t, xs):
        g = self.pieces[l]
        return g(t, xs) if callable(g) else float(g) * np.ones(np.shape(t))

    def phi(self, t, x):
        s = np.asarray(self.breakpoints)
        l = max(int(np.searchsorted(s, t, side="left")) - 1, 0)
        return float(self._piece(l, t, x.values(s[l])))

    def holdings(self, x, times):
        s = np.asarray(self.breakpoints)
        times = np.asarray(times, dtype=float)
        idx = np.clip(np.searchsorted(s, times, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.empty(times.shape)
        for l in np.unique(idx):
            sel = idx == l
            out[sel] = self._piece(int(l), times[sel], x.values(s[l]))
        return out


class HoldingsIntegrand(PathFunctional):
    """A portfolio's cell holdings as a Föllmer integrand."""

    def __init__(self, phi: Portfolio):
        self.portfolio = phi

    def evaluate(self, x, times):
        return self.portfolio.holdings(x, np.asarray(times, dtype=float))


# ---------------------------------------------------------------------------
# rollout


@dataclass(frozen=True)
class ValuePath:
    level: int
    times: np.ndarray
    values: np.ndarray
    phi: np.ndarray  # holding over the cell starting at each node (last entry repeats)
    psi: np.ndarray
    terminal: float
    self_financing_residual: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "V", "phi", "psi"])
        for row in zip(self.times, self.values, self.phi, self.psi):
            w.writerow([_g(v) for v in row])
        return buf.getvalue()


def _g(v: float) -> str:
    return format(float(v), ".17g")


def _recursion(phi: Portfolio, x: Trajectory, nodes: np.ndarray):
    xv = x.values(nodes)
    hold = phi.holdings(x, nodes[:-1])
    dx = np.diff(xv)
    if phi.r == 0:
        values = phi.V0 + np.concatenate(([0.0], np.cumsum(hold * dx)))
    else:
        values = np.empty(nodes.size)
        values[0] = phi.V0
        dt = np.diff(nodes)
        v = phi.V0
        for i in range(dx.size):
            v = v + (v - hold[i] * xv[i]) * phi.r * dt[i] + hold[i] * dx[i]
            values[i + 1] = v
    psi = values[:-1] - hold * xv[:-1]
    return xv, hold, psi, values


def _identity_residual(phi: Portfolio, x: Trajectory, p: PartitionSequence, level: int, terminal: float) -> float:
    """``|V(T) - V0 - int psi r dt - int phi dx|`` with integrals at ``level``."""
    nodes = p.grid(level)
    _, hold, psi, _ = _recursion(phi, x, nodes)
    b = phi.bond_offset
    stieltjes = math.fsum((psi + b) * phi.r * np.diff(nodes))
    follmer = follmer_sum(HoldingsIntegrand(phi), x, p, level)
    # marked-to-market values carry the extra bond units at both ends
    return abs((terminal + b) - (phi.V0 + b) - stieltjes - follmer)


def rollout_value(phi: Portfolio, x: Trajectory, p: PartitionSequence, level: int) -> ValuePath:
    """Discrete self-financing rollout along the level-``level`` nodes."""
    if abs(x.T - p.T) > 1e-12 * p.T:
        raise InvalidArgument("trajectory and partition horizons differ")
    nodes = p.grid(level)
    xv, hold, psi, values = _recursion(phi, x, nodes)
    terminal = float(values[-1])
    resid = _identity_residual(phi, x, p, level, terminal)
    return ValuePath(level, nodes, values, np.append(hold, hold[-1]),
                     np.append(psi, values[-1] - hold[-1] * xv[-1]) + phi.bond_offset, terminal, resid)


def self_financing_residual(phi: Portfolio, x: Trajectory, p: PartitionSequence, level: int,
                            eval_level: int | None = None) -> float:
    """Residual of the value identity for the rollout at ``level``.

    The integrals are re-evaluated at ``eval_level`` (default ``level``).
    """
    terminal = rollout_value(phi, x, p, level).terminal
    return _identity_residual(phi, x, p, level if eval_level is None else eval_level, terminal)


def value_before(phi: Portfolio, x: Trajectory, p: PartitionSequence, level: int, t: float) -> float:
    """``V(t-)`` for the level-``level`` rollout, ``0 < t <= T``."""
    nodes = p.grid(level)
    k = int(np.searchsorted(nodes, t, side="left")) - 1
    if not 0 < t <= p.T:
        raise InvalidArgument("t must lie in (0, T]")
    sub = nodes[: k + 1]
    if sub.size > 1:
        _, _, _, values = _recursion(phi, x, sub)
    else:
        values = np.array([phi.V0])
    tk, vk = nodes[k], values[-1]
    h = float(phi.holdings(x, np.array([tk]))[0])
    xk, xt = float(x.values(tk)), float(x.values(t, "left"))
    return vk + (vk - h * xk) * phi.r * (t - tk) + h * (xt - xk)


def psi_at(phi: Portfolio, x: Trajectory, p: PartitionSequence, level: int, t: float) -> float:
    """Bond units at ``t`` from ``V(t-) - phi(t) x(t-)``."""
    if t == 0:
        return phi.V0 - phi.phi(0.0, x) * x.x0 + phi.bond_offset
    return value_before(phi, x, p, level, t) - phi.phi(t, x) * float(x.values(t, "left")) + phi.bond_offset


def check_predictability(phi: Portfolio, x: Trajectory, y: Trajectory, t: float,
                         p: PartitionSequence | None = None, level: int | None = None, atol: float = 0.0) -> None:
    """Raise unless ``phi`` (and ``psi`` when ``p`` is given) agree on ``x`` and on
    ``x`` spliced into ``y`` at ``t``; the two paths coincide on ``[0, t)``."""
    z = splice(x, y, t)
    a, b = phi.phi(t, x), phi.phi(t, z)
    if not abs(a - b) <= atol:
        raise PredictabilityError(f"phi at {t} differs on paths agreeing before {t}: {a} vs {b}")
    if p is not None:
        lvl = p.max_level if level is None else level
        a, b = psi_at(phi, x, p, lvl, t), psi_at(phi, z, p, lvl, t)
        if not abs(a - b) <= atol:
            raise PredictabilityError(f"psi at {t} differs on paths agreeing before {t}: {a} vs {b}")


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class AdmissibilityReport:
    floor: float
    min_value: float
    worst_path: int
    worst_time: float
    admissible: bool
    n_paths: int


def admissibility_check(phi: Portfolio, bundle: Sequence[Trajectory], p: PartitionSequence, level: int,
                        tol: float = 0.0) -> AdmissibilityReport:
    """Check ``V >= -A`` at every node of every path in the bundle."""
    if not bundle:
        raise InvalidArgument("empty bundle")
    worst = (math.inf, -1, math.nan)
    for k, x in enumerate(bundle):
        vp = rollout_value(phi, x, p, level)
        i = int(np.argmin(vp.values))
        if vp.values[i] < worst[0]:
            worst = (float(vp.values[i]), k, float(vp.times[i]))
    return AdmissibilityReport(phi.floor, worst[0], worst[1], worst[2], worst[0] >= -phi.floor - tol, len(bundle))
