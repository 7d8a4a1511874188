"""Positive RCLL trajectories and generators for the trajectory classes.

A :class:`Trajectory` stores ``x(t) = x0 * exp(mu*t + sigma*z(t)) * prod(factors of jumps <= t)``
where ``z`` is sampled on a master grid and linearly interpolated in between.
Jump times are kept exactly; they are never snapped to the grid.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import InvalidArgument
from .partitions import PartitionSequence

SeedLike = Union[int, np.random.SeedSequence]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    x0: float
    mu: float
    sigma: float
    grid: np.ndarray
    z: np.ndarray
    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    jump_factors: np.ndarray = field(default_factory=lambda: np.empty(0))
    label: str = ""

    def __post_init__(self):
        grid, z = _frozen(self.grid), _frozen(self.z)
        times, factors = _frozen(self.jump_times), _frozen(self.jump_factors)
        if not self.x0 > 0:
            raise InvalidArgument(f"x0 must be positive, got {self.x0}")
        if self.sigma < 0:
            raise InvalidArgument(f"sigma must be non-negative, got {self.sigma}")
        if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise InvalidArgument("master grid must be strictly increasing from 0")
        if z.shape != grid.shape:
            raise InvalidArgument("z must have one value per grid node")
        if z[0] != 0.0:
            raise InvalidArgument("z(0) must be 0")
        if times.shape != factors.shape or times.ndim != 1:
            raise InvalidArgument("jump times and factors must be paired")
        if times.size:
            if times[0] <= 0 or times[-1] >= grid[-1] or np.any(np.diff(times) <= 0):
                raise InvalidArgument("jump times must be strictly increasing inside (0, T)")
            if np.any(factors <= 0) or not np.all(np.isfinite(factors)):
                raise InvalidArgument("jump factors 1+a_i must be positive")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "jump_factors", factors)
        prefix = np.concatenate(([1.0], np.cumprod(factors)))
        prefix.setflags(write=False)
        object.__setattr__(self, "_prefix", prefix)

    @property
    def T(self) -> float:
        return float(self.grid[-1])

    @property
    def n_jumps(self) -> int:
        return int(self.jump_times.size)

    def _continuous(self, t):
        return self.x0 * np.exp(self.mu * t + self.sigma * np.interp(t, self.grid, self.z))

    def values(self, t, side: str = "right") -> np.ndarray:
        """Vectorized x(t) (``side="right"``) or x(t-) (``side="left"``)."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.jump_times, t, side="right" if side == "right" else "left")
        return self._continuous(t) * self._prefix[k]

    def values_lr(self, t) -> tuple[np.ndarray, np.ndarray]:
        """``(x(t), x(t-))`` sharing one evaluation of the continuous part."""
        t = np.asarray(t, dtype=float)
        c = self._continuous(t)
        return (c * self._prefix[np.searchsorted(self.jump_times, t, side="right")],
                c * self._prefix[np.searchsorted(self.jump_times, t, side="left")])

    def evaluate(self, t: float) -> tuple[float, float, float]:
        """Return ``(x(t-), x(t), x(t) - x(t-))``."""
        if not 0.0 <= t <= self.T:
            raise InvalidArgument(f"t={t} outside [0, {self.T}]")
        left = float(self.values(t, "left"))
        right = float(self.values(t, "right"))
        return left, right, right - left

    def jump_sizes(self) -> np.ndarray:
        """Absolute price jumps x(s_i) - x(s_i-) at the stored jump times."""
        if not self.n_jumps:
            return np.empty(0)
        left = self.values(self.jump_times, "left")
        return left * (self.jump_factors - 1.0)

    def node_values(self) -> np.ndarray:
        """Right values at the master-grid nodes (no interpolation needed there)."""
        out = self.x0 * np.exp(self.mu * self.grid + self.sigma * self.z)
        if self.n_jumps:
            out = out * self._prefix[np.searchsorted(self.jump_times, self.grid, side="right")]
        return out

    def log_node_values(self) -> np.ndarray:
        """``log x`` at the master-grid nodes (right values)."""
        out = math.log(self.x0) + self.mu * self.grid + self.sigma * self.z
        if self.n_jumps:
            out += np.log(self._prefix[np.searchsorted(self.jump_times, self.grid, side="right")])
        return out

    def breakpoints(self) -> np.ndarray:
        """Master grid merged with jump times (sorted, unique)."""
        return np.union1d(self.grid, self.jump_times)

    def minimum(self) -> float:
        pts = self.breakpoints()
        return float(min(self.values(pts).min(), self.values(pts, "left").min()))

    def same_class_params(self, other: "Trajectory") -> bool:
        return (
            self.x0 == other.x0
            and self.mu == other.mu
            and self.sigma == other.sigma
            and self.T == other.T
        )


# ---------------------------------------------------------------------------
# constructors


def poisson_trajectory(x0: float, mu: float, a: float, jump_times: Sequence[float], grid) -> Trajectory:
    """A member of the geometric Poisson class with the given jump times."""
    if a <= -1:
        raise InvalidArgument(f"jump size a must exceed -1, got {a}")
    times = np.sort(np.asarray(jump_times, dtype=float))
    grid = np.asarray(grid, dtype=float)
    return Trajectory(x0, mu, 0.0, grid, np.zeros_like(grid), times, np.full(times.size, 1.0 + a))


def constant_trajectory(x0: float, grid) -> Trajectory:
    grid = np.asarray(grid, dtype=float)
    return Trajectory(x0, 0.0, 0.0, grid, np.zeros_like(grid))


def splice(x: Trajectory, y: Trajectory, t: float) -> Trajectory:
    """Path equal to ``x`` on ``[0, t)`` and to ``y`` on ``[t, T]``.

    ``t`` must be a node of the common master grid; the seam is carried by a
    jump at ``t`` when the two paths disagree there.
    """
    if not x.same_class_params(y) or not np.array_equal(x.grid, y.grid):
        raise InvalidArgument("splice needs paths with the same parameters and grid")
    k = int(np.searchsorted(x.grid, t))
    if k >= x.grid.size or x.grid[k] != t or not 0 < t < x.T:
        raise InvalidArgument("splice time must be an interior grid node")
    z = np.concatenate((x.z[:k], y.z[k:] - y.z[k] + x.z[k]))
    before = x.jump_times < t
    after = y.jump_times >= t
    seam = float(y.values(t, "right") / x.values(t, "left"))
    times = list(x.jump_times[before])
    factors = list(x.jump_factors[before])
    at_t = after & (y.jump_times == t)
    # y's own jump at t is already folded into the seam factor
    rest = after & ~at_t
    if seam != 1.0:
        times.append(t)
        factors.append(seam)
    times += list(y.jump_times[rest])
    factors += list(y.jump_factors[rest])
    return Trajectory(x.x0, x.mu, x.sigma, x.grid, z, np.array(times), np.array(factors), label="splice")


def with_terminal(x: Trajectory, target: float) -> Trajectory:
    """Add the linear drift to ``z`` that moves ``x(T)`` to ``target``.

    A linear term has zero quadratic variation, so class membership of a
    continuous-QV path is preserved.
    """
    if x.sigma <= 0:
        raise InvalidArgument("terminal adjustment needs sigma > 0")
    if not target > 0:
        raise InvalidArgument("target terminal value must be positive")
    shift = math.log(target / float(x.values(x.T))) / x.sigma
    z = x.z + shift * x.grid / x.T
    return Trajectory(x.x0, x.mu, x.sigma, x.grid, z, x.jump_times, x.jump_factors, label=x.label)


# ---------------------------------------------------------------------------
# jump sources and jump-size laws


@dataclass(frozen=True)
class ExponentialGaps:
    rate: float

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(1.0 / self.rate, size)

    @property
    def mean(self) -> float:
        return 1.0 / self.rate


@dataclass(frozen=True)
class GammaGaps:
    shape: float
    scale: float

    def sample(self, rng, size):
        return rng.gamma(self.shape, self.scale, size)

    @property
    def mean(self):
        return self.shape * self.scale


@dataclass(frozen=True)
class ParetoGaps:
    """Heavy-tailed gaps with ``P(gap > u) = (1 + u/scale) ** -(1 + beta)``."""

    beta: float
    scale: float = 1.0

    def sample(self, rng, size):
        return self.scale * rng.pareto(1.0 + self.beta, size)

    @property
    def mean(self):
        return self.scale / self.beta


@dataclass(frozen=True)
class RationalGaps:
    """Exponential gaps rounded up to a positive multiple of ``1/denominator``."""

    rate: float
    denominator: int = 1000

    def sample(self, rng, size):
        raw = rng.exponential(1.0 / self.rate, size)
        return np.maximum(np.ceil(raw * self.denominator), 1.0) / self.denominator

    @property
    def mean(self):
        return 1.0 / self.rate


GapLaw = Union[ExponentialGaps, GammaGaps, ParetoGaps, RationalGaps]


@dataclass(frozen=True)
class RenewalJumps:
    gaps: GapLaw

    def times(self, rng: np.random.Generator, T: float) -> np.ndarray:
        out = []
        s = 0.0
        batch = max(8, int(2 * T / self.gaps.mean) + 4)
        while True:
            for g in self.gaps.sample(rng, batch):
                s += float(g)
                if s >= T:
                    return np.array(out)
                if s > 0 and (not out or s > out[-1]):
                    out.append(s)


def PoissonJumps(rate: float) -> RenewalJumps:
    if not rate > 0:
        raise InvalidArgument(f"Poisson rate must be positive, got {rate}")
    return RenewalJumps(ExponentialGaps(rate))


@dataclass(frozen=True)
class ExplicitJumps:
    times_: tuple

    def times(self, rng, T):
        t = np.sort(np.asarray(self.times_, dtype=float))
        if t.size and (t[0] <= 0 or t[-1] >= T):
            raise InvalidArgument("explicit jump times must lie inside (0, T)")
        return t


JumpSource = Union[RenewalJumps, ExplicitJumps]


@dataclass(frozen=True)
class UniformJumpLaw:
    """Relative jumps ``X`` uniform on ``[low, high]``; factor is ``1 + X``."""

    low: float
    high: float

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    @property
    def support_inf(self):
        return self.low

    def contains(self, x):
        x = np.asarray(x)
        return (x >= self.low - 1e-12) & (x <= self.high + 1e-12)


@dataclass(frozen=True)
class LogNormalJumpLaw:
    """``log(1 + X)`` normal with the given mean and standard deviation."""

    mean: float
    std: float

    def sample(self, rng, size):
        return np.expm1(rng.normal(self.mean, self.std, size))

    @property
    def support_inf(self):
        return -1.0

    def contains(self, x):
        return np.asarray(x) > -1.0


@dataclass(frozen=True)
class DiscreteJumpLaw:
    values: tuple
    probs: tuple | None = None

    def sample(self, rng, size):
        return rng.choice(np.asarray(self.values, float), size=size, p=self.probs)

    @property
    def support_inf(self):
        return float(min(self.values))

    def contains(self, x):
        v = np.asarray(self.values, float)
        return np.any(np.isclose(np.asarray(x)[..., None], v, rtol=0, atol=1e-12), axis=-1)


JumpLaw = Union[UniformJumpLaw, LogNormalJumpLaw, DiscreteJumpLaw]


# ---------------------------------------------------------------------------
# class specifications


@dataclass(frozen=True)
class ContinuousQV:
    """x0 * exp(mu t + sigma z(t)) with [z]_t = t.

    ``generator`` picks z: ``"bm"``, ``"bm_plus_fbm"`` (W + B^H, H in (1/2, 1))
    or ``"bm_plus_reflected"`` (rho W + sqrt(1 - rho^2) |B~|, optionally
    folded into ``[0, bound]``).
    """

    x0: float
    sigma: float
    generator: str = "bm"
    hurst: float | None = None
    rho: float | None = None
    bound: float | None = None
    mu: float = 0.0

    def validate(self):
        if not self.x0 > 0:
            raise InvalidArgument("x0 must be positive")
        if not self.sigma > 0:
            raise InvalidArgument("continuous classes need sigma > 0")
        _check_generator(self.generator, self.hurst, self.rho, self.bound)


@dataclass(frozen=True)
class GeometricPoisson:
    """x0 * exp(mu t) * (1 + a) ** n(t)."""

    x0: float
    mu: float
    a: float
    jumps: JumpSource

    def validate(self):
        if not self.x0 > 0:
            raise InvalidArgument("x0 must be positive")
        if not self.a > -1:
            raise InvalidArgument(f"jump size a must exceed -1, got {self.a}")
        if self.a == 0:
            raise InvalidArgument("jump size a must be non-zero")


@dataclass(frozen=True)
class JumpDiffusion:
    x0: float
    mu: float
    sigma: float
    law: JumpLaw
    jumps: JumpSource
    generator: str = "bm"
    hurst: float | None = None
    rho: float | None = None
    bound: float | None = None

    def validate(self):
        if not self.x0 > 0:
            raise InvalidArgument("x0 must be positive")
        if not self.sigma > 0:
            raise InvalidArgument("jump-diffusion classes need sigma > 0")
        open_at_minus_one = isinstance(self.law, LogNormalJumpLaw)
        if not (self.law.support_inf > -1 or open_at_minus_one):
            raise InvalidArgument("jump-size support must stay above -1")
        _check_generator(self.generator, self.hurst, self.rho, self.bound)


ClassSpec = Union[ContinuousQV, GeometricPoisson, JumpDiffusion]


def _check_generator(generator, hurst, rho, bound):
    if generator == "bm":
        return
    if generator == "bm_plus_fbm":
        if hurst is None or not 0.5 < hurst < 1:
            raise InvalidArgument(f"fBm perturbation needs H in (1/2, 1), got {hurst}")
        return
    if generator == "bm_plus_reflected":
        if rho is None or not 0 < rho < 1:
            raise InvalidArgument(f"reflected mixture needs rho in (0, 1), got {rho}")
        if bound is not None and not bound > 0:
            raise InvalidArgument("reflection bound must be positive")
        return
    raise InvalidArgument(f"unknown generator {generator!r}")


# ---------------------------------------------------------------------------
# sampling


def brownian_walk(rng: np.random.Generator, grid: np.ndarray) -> np.ndarray:
    dw = rng.standard_normal(grid.size - 1) * np.sqrt(np.diff(grid))
    return np.concatenate(([0.0], np.cumsum(dw)))


def fbm_walk(rng: np.random.Generator, n_steps: int, T: float, hurst: float) -> np.ndarray:
    """Exact fBm on a uniform grid via circulant embedding (Davies-Harte)."""
    k = np.arange(n_steps + 1, dtype=float)
    h2 = 2.0 * hurst
    gamma = 0.5 * (np.abs(k + 1) ** h2 - 2 * k**h2 + np.abs(k - 1) ** h2)
    row = np.concatenate((gamma, gamma[-2:0:-1]))
    eig = np.fft.fft(row).real
    if eig.min() < -1e-10 * eig.max():
        # circulant embedding is not PSD; fall back to Cholesky on the covariance
        cov = gamma[np.abs(np.subtract.outer(np.arange(n_steps), np.arange(n_steps)))]
        noise = np.linalg.cholesky(cov) @ rng.standard_normal(n_steps)
    else:
        m = row.size
        w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        noise = np.fft.fft(np.sqrt(np.maximum(eig, 0.0) / m) * w)[:n_steps].real
    noise *= (T / n_steps) ** hurst
    return np.concatenate(([0.0], np.cumsum(noise)))


def _reflect(path: np.ndarray, bound: float | None) -> np.ndarray:
    if bound is None:
        return np.abs(path)
    y = np.mod(path, 2 * bound)
    return np.where(y > bound, 2 * bound - y, y)


def _sample_z(rng, grid, generator, hurst, rho, bound) -> np.ndarray:
    if generator == "bm":
        return brownian_walk(rng, grid)
    if generator == "bm_plus_fbm":
        w = brownian_walk(rng, grid)
        dt = np.diff(grid)
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=0):
            raise InvalidArgument("fBm sampling needs a uniform master grid")
        return w + fbm_walk(rng, grid.size - 1, float(grid[-1]), hurst)
    if generator == "bm_plus_reflected":
        w = brownian_walk(rng, grid)
        other = brownian_walk(rng, grid)
        return rho * w + math.sqrt(1 - rho * rho) * _reflect(other, bound)
    raise InvalidArgument(f"unknown generator {generator!r}")


def _rng(seed: SeedLike) -> np.random.Generator:
    return np.random.default_rng(seed)


def generate_trajectory(spec: ClassSpec, partition: PartitionSequence, seed: SeedLike, level: int | None = None) -> Trajectory:
    """Draw one member of ``spec``'s class on the partition's finest grid.

    ``level`` can raise the master grid resolution above ``partition.max_level``
    only through a finer partition; a coarser master grid is rejected.
    """
    spec.validate()
    if level is not None and level < partition.max_level:
        raise InvalidArgument("master grid must be at least as fine as the finest partition level")
    grid = partition.grid(partition.max_level if level is None else level)
    T = partition.T
    rng = _rng(seed)
    if isinstance(spec, ContinuousQV):
        z = _sample_z(rng, grid, spec.generator, spec.hurst, spec.rho, spec.bound)
        return Trajectory(spec.x0, spec.mu, spec.sigma, grid, z, label="continuous_qv")
    if isinstance(spec, GeometricPoisson):
        times = spec.jumps.times(rng, T)
        return Trajectory(spec.x0, spec.mu, 0.0, grid, np.zeros_like(grid), times,
                          np.full(times.size, 1.0 + spec.a), label="geometric_poisson")
    if isinstance(spec, JumpDiffusion):
        z = _sample_z(rng, grid, spec.generator, spec.hurst, spec.rho, spec.bound)
        times = spec.jumps.times(rng, T)
        factors = 1.0 + spec.law.sample(rng, times.size)
        return Trajectory(spec.x0, spec.mu, spec.sigma, grid, z, times, factors, label="jump_diffusion")
    raise InvalidArgument(f"unsupported class spec {type(spec).__name__}")


def path_seeds(seed: int, n: int) -> list[int]:
    """Independent per-path seeds derived from one experiment seed."""
    state = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def generate_bundle(spec: ClassSpec, partition: PartitionSequence, n: int, seed: int,
                    filter_fn: Callable[[Trajectory], bool] | None = None) -> list[Trajectory]:
    """``n`` trajectories with per-path derived seeds.

    With ``filter_fn`` the seed stream is walked until ``n`` accepted paths are
    collected, so the result is still a pure function of ``seed``.
    """
    if n < 0:
        raise InvalidArgument("bundle size must be non-negative")
    if filter_fn is None:
        return [generate_trajectory(spec, partition, s) for s in path_seeds(seed, n)]
    out: list[Trajectory] = []
    chunk = 0
    while len(out) < n:
        if chunk > 1000:
            raise InvalidArgument("filter rejects almost every path")
        for s in path_seeds(seed + 7919 * chunk, max(n, 16)):
            x = generate_trajectory(spec, partition, s)
            if filter_fn(x):
                out.append(x)
                if len(out) == n:
                    break
        chunk += 1
    return out


# ---------------------------------------------------------------------------
# CSV path files


def _g(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(x: Trajectory, fh) -> None:
    """Write ``x`` as ``record,a,b,c,d`` rows: header, one node row per grid point, one jump row per jump."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["record", "a", "b", "c", "d"])
    w.writerow(["header", _g(x.x0), _g(x.mu), _g(x.sigma), _g(x.T)])
    for t, z in zip(x.grid, x.z):
        w.writerow(["node", _g(t), _g(z), "", ""])
    for s, f in zip(x.jump_times, x.jump_factors):
        w.writerow(["jump", _g(s), _g(f), "", ""])


def read_trajectory_csv(fh) -> Trajectory:
    header = None
    grid, z, times, factors = [], [], [], []
    for row in csv.reader(fh):
        if not row or row[0] == "record":
            continue
        kind = row[0]
        if kind == "header":
            header = [float(v) for v in row[1:5]]
        elif kind == "node":
            grid.append(float(row[1]))
            z.append(float(row[2]))
        elif kind == "jump":
            times.append(float(row[1]))
            factors.append(float(row[2]))
        else:
            raise InvalidArgument(f"unknown record type {kind!r}")
    if header is None:
        raise InvalidArgument("path file has no header row")
    x0, mu, sigma, T = header
    if not grid or grid[-1] != T:
        raise InvalidArgument("node rows must end at the declared horizon")
    return Trajectory(x0, mu, sigma, np.array(grid), np.array(z), np.array(times), np.array(factors))


def trajectory_to_csv(x: Trajectory) -> str:
    buf = io.StringIO()
    write_trajectory_csv(x, buf)
    return buf.getvalue()


def trajectory_from_csv(text: str) -> Trajectory:
    return read_trajectory_csv(io.StringIO(text))
