"""Replication engines: PDE delta hedge and the geometric-Poisson series hedge."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import gammainc
from scipy.stats import poisson

from .errors import ExtrapolationError, InvalidArgument
from .partitions import PartitionSequence
from .paths import Trajectory
from .portfolio import Portfolio, rollout_value

PAYOFF_KINDS = ("call", "put", "custom", "stock", "zero")


@dataclass(frozen=True)
class Payoff:
    """Terminal payoff ``h``; ``custom`` is a piecewise-linear table."""

    kind: str
    strike: float | None = None
    table_x: tuple = ()
    table_h: tuple = ()
    lipschitz: float | None = None

    def __post_init__(self):
        if self.kind not in PAYOFF_KINDS:
            raise InvalidArgument(f"unknown payoff {self.kind!r}")
        if self.kind in ("call", "put") and not (self.strike is not None and self.strike > 0):
            raise InvalidArgument("call/put needs a positive strike")
        if self.kind == "custom":
            tx, th = np.asarray(self.table_x, float), np.asarray(self.table_h, float)
            if tx.size < 2 or tx.shape != th.shape or np.any(np.diff(tx) <= 0):
                raise InvalidArgument("custom payoff needs an increasing table of at least two points")
            if self.lipschitz is None:
                raise InvalidArgument("custom payoff needs a declared Lipschitz constant")
            slope = np.max(np.abs(np.diff(th) / np.diff(tx)))
            if slope > self.lipschitz * (1 + 1e-12):
                raise InvalidArgument(f"table slope {slope} exceeds declared Lipschitz constant {self.lipschitz}")

    @property
    def L(self) -> float:
        if self.kind == "custom":
            return float(self.lipschitz)
        return 0.0 if self.kind == "zero" else 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "call":
            return np.maximum(x - self.strike, 0.0)
        if self.kind == "put":
            return np.maximum(self.strike - x, 0.0)
        if self.kind == "stock":
            return x.copy()
        if self.kind == "zero":
            return np.zeros_like(x)
        # flat beyond the table keeps the declared Lipschitz constant valid
        return np.interp(x, self.table_x, self.table_h)

    def discounted_asymptote(self, x, tau: float, r: float):
        """Far-field value ``e^{-r tau} h(x e^{r tau})``."""
        return math.exp(-r * tau) * self(np.asarray(x) * math.exp(r * tau))


# ---------------------------------------------------------------------------
# Black-Scholes PDE


@dataclass(frozen=True)
class SurfaceGrid:
    x_min: float
    x_max: float
    n_space: int = 1600
    n_time: int = 1000
    rannacher_steps: int = 4

    def __post_init__(self):
        if not 0 < self.x_min < self.x_max:
            raise InvalidArgument("need 0 < x_min < x_max")
        if self.n_space < 10 or self.n_time < 2:
            raise InvalidArgument("grid too small")


def grid_for_range(lo: float, hi: float, sigma: float, T: float, n_space: int = 1600, n_time: int = 1000,
                   width: float = 6.0) -> SurfaceGrid:
    """Log-price grid covering ``[lo, hi]`` plus ``width * sigma * sqrt(T)`` on each side."""
    pad = width * sigma * math.sqrt(T)
    return SurfaceGrid(lo * math.exp(-pad), hi * math.exp(pad), n_space, n_time)


def grid_for_bundle(bundle: Sequence[Trajectory], sigma: float, T: float, **kw) -> SurfaceGrid:
    lo = min(x.minimum() for x in bundle)
    hi = max(float(np.max(x.values(x.breakpoints()))) for x in bundle)
    return grid_for_range(lo, hi, sigma, T, **kw)


@dataclass(frozen=True, eq=False)
class ValueSurface:
    times: np.ndarray  # calendar time, 0..T
    log_x: np.ndarray
    values: np.ndarray  # shape (n_time+1, n_space+1)
    delta_values: np.ndarray
    payoff: Payoff
    sigma: float
    r: float
    T: float
    meta: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return np.exp(self.log_x)

    def _locate(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        t, x = np.broadcast_arrays(t, x)
        if np.any(t < 0) or np.any(t > self.T * (1 + 1e-12)):
            raise ExtrapolationError("time outside the surface")
        y = np.log(x)
        if np.any(y < self.log_x[0]) or np.any(y > self.log_x[-1]):
            bad = x[(y < self.log_x[0]) | (y > self.log_x[-1])]
            raise ExtrapolationError(
                f"price {bad.flat[0]:.6g} outside surface domain "
                f"[{math.exp(self.log_x[0]):.6g}, {math.exp(self.log_x[-1]):.6g}]")
        dt = self.times[1] - self.times[0]
        dy = self.log_x[1] - self.log_x[0]
        ft = np.clip(t / dt, 0, self.times.size - 1 - 1e-9)
        fy = np.clip((y - self.log_x[0]) / dy, 0, self.log_x.size - 1 - 1e-9)
        i, j = ft.astype(int), fy.astype(int)
        return i, j, ft - i, fy - j

    def _bilinear(self, table, t, x):
        i, j, a, b = self._locate(t, x)
        return ((1 - a) * ((1 - b) * table[i, j] + b * table[i, j + 1])
                + a * ((1 - b) * table[i + 1, j] + b * table[i + 1, j + 1]))

    def value(self, t, x):
        return self._bilinear(self.values, t, x)

    def delta(self, t, x):
        return self._bilinear(self.delta_values, t, x)


def solve_bs_pde(h: Payoff, sigma: float, r: float, T: float, grid: SurfaceGrid) -> ValueSurface:
    """Crank-Nicolson in log-price with a Rannacher start and Dirichlet far field.

    The Dirichlet data are ``e^{-r tau} h(x e^{r tau})``; delta is the
    centered difference of ``v`` in ``x``.
    """
    if not sigma > 0:
        raise InvalidArgument("sigma must be positive")
    if not T > 0 or r < 0 or not math.isfinite(r):
        raise InvalidArgument("need T > 0 and finite r >= 0")
    ny, nt = grid.n_space, grid.n_time
    y = np.linspace(math.log(grid.x_min), math.log(grid.x_max), ny + 1)
    dy = y[1] - y[0]
    dtau = T / nt
    xs = np.exp(y)
    # v_tau = a v_yy + b v_y - r v
    a = 0.5 * sigma**2
    b = r - 0.5 * sigma**2
    lo = a / dy**2 - b / (2 * dy)
    di = -2 * a / dy**2 - r
    up = a / dy**2 + b / (2 * dy)
    meta = {"scheme": "crank_nicolson", "rannacher_steps": grid.rannacher_steps, "n_space": ny,
            "n_time": nt, "x_min": grid.x_min, "x_max": grid.x_max, "warnings": []}
    if lo < 0:
        meta["warnings"].append("space step too coarse for monotone convection")
    if dy > sigma * math.sqrt(T) / 10:
        meta["warnings"].append("space step exceeds sigma*sqrt(T)/10")

    def banded(theta, step):
        ab = np.zeros((3, ny - 1))
        ab[0, 1:] = -theta * step * up
        ab[1, :] = 1 - theta * step * di
        ab[2, :-1] = -theta * step * lo
        return ab

    def explicit(v, theta, step):
        w = v[1:-1] + (1 - theta) * step * (lo * v[:-2] + di * v[1:-1] + up * v[2:])
        return w

    values = np.empty((nt + 1, ny + 1))
    v = h(xs)
    values[nt] = v
    half = dtau / 2
    ab_imp = banded(1.0, half)
    ab_cn = banded(0.5, dtau)
    tau = 0.0
    for n in range(nt):
        substeps = [(1.0, half, ab_imp)] * 2 if n < grid.rannacher_steps // 2 else [(0.5, dtau, ab_cn)]
        for theta, step, ab in substeps:
            tau_new = tau + step
            rhs = explicit(v, theta, step)
            left = float(h.discounted_asymptote(xs[0], tau_new, r))
            right = float(h.discounted_asymptote(xs[-1], tau_new, r))
            rhs[0] += theta * step * lo * left
            rhs[-1] += theta * step * up * right
            inner = solve_banded((1, 1), ab, rhs)
            v = np.concatenate(([left], inner, [right]))
            tau = tau_new
        values[nt - n - 1] = v
    if np.any(values < -1e-9 * max(1.0, float(np.max(np.abs(values))))) and np.all(h(xs) >= 0):
        meta["warnings"].append("negative values for a non-negative payoff")
    dv = np.empty_like(values)
    dv[:, 1:-1] = (values[:, 2:] - values[:, :-2]) / (2 * dy)
    dv[:, 0] = (values[:, 1] - values[:, 0]) / dy
    dv[:, -1] = (values[:, -1] - values[:, -2]) / dy
    delta = dv / xs
    times = np.linspace(0.0, T, nt + 1)
    values[nt] = h(xs)  # terminal condition exactly
    return ValueSurface(times, y, values, delta, h, float(sigma), float(r), float(T), meta)


# ---------------------------------------------------------------------------
# geometric-Poisson series


def poisson_intensity(mu: float, a: float) -> float:
    if not a * mu < 0:
        raise InvalidArgument("series hedge needs a*mu < 0")
    return -mu / a


def tilde_F(t, s, h: Payoff, mu: float, a: float, T: float, K_trunc: int = 60):
    """Series value ``e^{-lam tau} sum_k h(s e^{mu tau} (1+a)^k) (lam tau)^k / k!``.

    Returns ``(value, tail_bound)`` with ``lam = -mu/a`` and ``tau = T - t``.
    """
    lam = poisson_intensity(mu, a)
    if K_trunc < 1:
        raise InvalidArgument("K_trunc must be at least 1")
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    tau = T - t
    if np.any(tau < -1e-12 * T) or np.any(s <= 0):
        raise InvalidArgument("need t <= T and s > 0")
    tau = np.maximum(tau, 0.0)
    k = np.arange(K_trunc + 1).reshape((-1,) + (1,) * np.broadcast(t, s).ndim)
    m = lam * tau
    weights = poisson.pmf(k, m)
    args = s * np.exp(mu * tau) * (1.0 + a) ** k
    value = np.sum(weights * h(args), axis=0)
    z = (1 + abs(a)) * m
    tail = (h.L * s * np.exp(abs(mu) * tau) * np.exp(z) * gammainc(K_trunc + 1, z)
            + abs(float(h(np.array(0.0)))) * gammainc(K_trunc + 1, m))
    if value.ndim == 0:
        return float(value), float(tail)
    return value, tail


# ---------------------------------------------------------------------------
# hedge portfolios


@dataclass(frozen=True)
class DeltaHedge(Portfolio):
    """``phi = d v / d x`` read from a solved surface."""

    surface: ValueSurface = None
    kind = "delta_hedge"

    def phi(self, t, x):
        return float(self.surface.delta(t, x.values(t, "left")))

    def holdings(self, x, times):
        return self.surface.delta(times, x.values(times))


@dataclass(frozen=True)
class PoissonSeriesHedge(Portfolio):
    """``phi = (F(t, (1+a) x(t-)) - F(t, x(t-))) / (a x(t-))``."""

    h: Payoff = None
    mu: float = 0.0
    a: float = 0.0
    T: float = 1.0
    K_trunc: int = 60
    kind = "poisson_series"

    def __post_init__(self):
        super().__post_init__()
        if self.r != 0:
            raise InvalidArgument("series hedge is defined for r = 0")
        poisson_intensity(self.mu, self.a)

    def _ratio(self, t, s):
        up = tilde_F(t, (1 + self.a) * s, self.h, self.mu, self.a, self.T, self.K_trunc)[0]
        here = tilde_F(t, s, self.h, self.mu, self.a, self.T, self.K_trunc)[0]
        return (up - here) / (self.a * s)

    def phi(self, t, x):
        return float(self._ratio(t, x.values(t, "left")))

    def holdings(self, x, times):
        return np.asarray(self._ratio(times, x.values(times)), dtype=float)


def build_hedge(model: str, *, surface: ValueSurface | None = None, x0: float | None = None,
                h: Payoff | None = None, mu: float | None = None, a: float | None = None,
                T: float | None = None, K_trunc: int = 60, floor: float = 0.0) -> Portfolio:
    """Replicating portfolio for the ``bs`` or ``poisson`` model."""
    if model == "bs":
        if surface is None or x0 is None:
            raise InvalidArgument("bs hedge needs a surface and x0")
        V0 = float(surface.value(0.0, x0))
        return DeltaHedge(V0=V0, r=surface.r, floor=floor, surface=surface)
    if model == "poisson":
        if h is None or mu is None or a is None or T is None or x0 is None:
            raise InvalidArgument("poisson hedge needs h, mu, a, T and x0")
        V0 = tilde_F(0.0, x0, h, mu, a, T, K_trunc)[0]
        return PoissonSeriesHedge(V0=V0, r=0.0, floor=floor, h=h, mu=mu, a=a, T=T, K_trunc=K_trunc)
    raise InvalidArgument(f"unknown hedge model {model!r}")


# ---------------------------------------------------------------------------
# replication


@dataclass(frozen=True)
class HedgeReport:
    rows: list  # (level, path_id, terminal_value, payoff, abs_error)
    summary: list  # (level, median_error, max_error, est_order)
    warnings: list = field(default_factory=list)

    def errors_at(self, level: int) -> np.ndarray:
        return np.array([r[4] for r in self.rows if r[0] == level])

    def median_errors(self) -> list[float]:
        return [s[1] for s in self.summary]

    @property
    def decreasing(self) -> bool:
        med = self.median_errors()
        return all(b < a for a, b in zip(med, med[1:]))

    def rows_csv(self) -> str:
        return _csv(["level", "path_id", "terminal_value", "payoff", "abs_error"], self.rows)

    def summary_csv(self) -> str:
        return _csv(["level", "median_error", "max_error", "est_order"], self.summary)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, (int, np.integer, str)) else format(float(v), ".17g") for v in row])
    return buf.getvalue()


def replicate(phi: Portfolio, bundle: Sequence[Trajectory], h: Payoff, p: PartitionSequence,
              levels: Sequence[int], sigma: float | None = None) -> HedgeReport:
    """Roll ``phi`` out on every path and level and tabulate ``|V(T) - h(x(T))|``.

    With ``sigma`` given, paths whose realized QV is far from the
    ``sigma^2 x^2`` integral are reported as class-mismatch warnings.
    """
    if not bundle:
        raise InvalidArgument("empty bundle")
    levels = sorted(int(n) for n in levels)
    rows, warnings = [], []
    for k, x in enumerate(bundle):
        target = float(h(np.array(x.values(x.T))))
        for n in levels:
            v = rollout_value(phi, x, p, n).terminal
            rows.append((n, k, v, target, abs(v - target)))
    if sigma is not None:
        from .calculus import quadratic_variation, sigma2_x2_integral

        for k, x in enumerate(bundle):
            qv = quadratic_variation(x, p, [x.T]).continuous_part[0]
            ref = sigma2_x2_integral(x, [x.T], sigma)[0]
            if ref > 0 and abs(qv - ref) > 0.25 * ref:
                warnings.append(f"path {k}: realized QV {qv:.4g} vs sigma^2 x^2 integral {ref:.4g}")
    summary = []
    prev = None
    for n in levels:
        err = np.array([r[4] for r in rows if r[0] == n])
        med = float(np.median(err))
        order = math.nan
        if prev is not None and prev[1] > 0 and med > 0:
            order = math.log(prev[1] / med) / math.log(p.mesh(prev[0]) / p.mesh(n))
        summary.append((n, med, float(err.max()), order))
        prev = (n, med)
    return HedgeReport(rows, summary, warnings)
