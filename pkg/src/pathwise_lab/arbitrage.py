"""Bundle-level arbitrage scans, V-continuity probes and class diagnostics.

Every verdict here is evidence about a finite bundle of trajectories. A
clean scan never certifies absence of arbitrage on the whole class, and a
sampled bundle cannot tell a full-measure set from a high-probability one.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .calculus import quadratic_variation, sigma2_x2_integral
from .errors import InvalidArgument
from .metrics import SmallBallEstimate, distance, small_ball_grid
from .partitions import PartitionSequence
from .paths import ClassSpec, ContinuousQV, GeometricPoisson, JumpDiffusion, Trajectory, with_terminal
from .portfolio import Portfolio, rollout_value

CAVEAT = "bundle-relative evidence only; sampling cannot separate full-measure from high-probability sets"


def _g(v) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------------------
# arbitrage scan


@dataclass(frozen=True)
class ArbitrageVerdict:
    outcome: str  # arbitrage_found | no_arbitrage_in_bundle | precondition_failed
    n_paths: int
    level: int
    tol: float
    witness: int | None = None
    witness_terminal: float | None = None
    min_terminal: float = math.nan
    max_terminal: float = math.nan
    n_positive: int = 0
    n_negative: int = 0
    reason: str = ""
    caveat: str = CAVEAT

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["outcome", "reason", "n_paths", "level", "tol", "witness", "witness_terminal",
                    "min_terminal", "max_terminal", "n_positive", "n_negative"])
        w.writerow([self.outcome, self.reason, self.n_paths, self.level, _g(self.tol),
                    "" if self.witness is None else self.witness,
                    "" if self.witness_terminal is None else _g(self.witness_terminal),
                    _g(self.min_terminal), _g(self.max_terminal), self.n_positive, self.n_negative])
        return buf.getvalue()


def financed(phi: Portfolio) -> Portfolio:
    """The same strategy started from zero wealth (its cost borrowed in bond)."""
    return dataclasses.replace(phi, V0=0.0)


def terminal_values(phi: Portfolio, bundle: Sequence[Trajectory], p: PartitionSequence, level: int) -> np.ndarray:
    return np.array([rollout_value(phi, x, p, level).terminal for x in bundle])


def scan_arbitrage(phi: Portfolio, bundle: Sequence[Trajectory], p: PartitionSequence, level: int,
                   tol: float) -> ArbitrageVerdict:
    """Apply the NP-arbitrage predicate to the rollouts on ``bundle``.

    ``arbitrage_found`` needs ``V0 = 0``, every terminal ``>= -tol`` and at
    least one ``> tol``. Otherwise ``reason`` is ``loss_witness`` when some
    path loses more than ``tol`` and ``no_profit`` when none gains.
    """
    if not bundle:
        raise InvalidArgument("empty bundle")
    if tol < 0:
        raise InvalidArgument("tol must be non-negative")
    if phi.V0 != 0:
        return ArbitrageVerdict("precondition_failed", len(bundle), level, tol,
                                reason=f"initial value {phi.V0} is not zero")
    vt = terminal_values(phi, bundle, p, level)
    pos = int(np.count_nonzero(vt > tol))
    neg = int(np.count_nonzero(vt < -tol))
    common = dict(min_terminal=float(vt.min()), max_terminal=float(vt.max()), n_positive=pos, n_negative=neg)
    if neg == 0 and pos > 0:
        k = int(np.argmax(vt))
        return ArbitrageVerdict("arbitrage_found", len(bundle), level, tol, witness=k,
                                witness_terminal=float(vt[k]), reason="profit_without_loss", **common)
    return ArbitrageVerdict("no_arbitrage_in_bundle", len(bundle), level, tol,
                            reason="loss_witness" if neg else "no_profit", **common)


# restrictions of a bundle to sub-classes


def restrict(bundle: Sequence[Trajectory], predicate: Callable[[Trajectory], bool]) -> list[Trajectory]:
    return [x for x in bundle if predicate(x)]


def terminal_above_x0(x: Trajectory) -> bool:
    return float(x.values(x.T)) > x.x0


def rational_terminal(bundle: Iterable[Trajectory], denominator: int = 1000) -> list[Trajectory]:
    """Move each path's terminal value to the nearest multiple of ``1/denominator``.

    The shift is a linear drift in the continuous component, which has zero
    quadratic variation, so the continuous class is preserved.
    """
    out = []
    for x in bundle:
        xt = float(x.values(x.T))
        target = max(round(xt * denominator), 1) / denominator
        out.append(with_terminal(x, target))
    return out


# ---------------------------------------------------------------------------
# V-continuity probe

VERDICTS = ("consistent_with_continuity", "discontinuity_witness", "lower_semicontinuity_witness")


@dataclass(frozen=True)
class ContinuityReport:
    base: Trajectory
    metric: str
    distances: tuple
    base_terminal: float
    terminals: tuple
    gaps: tuple  # V(T, x_n) - V(T, base), signed
    gap_threshold: float
    verdict: str

    def csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "distance", "base_terminal", "perturbed_terminal", "gap", "verdict"])
        for n, (d, v, g) in enumerate(zip(self.distances, self.terminals, self.gaps), start=1):
            w.writerow([n, _g(d), _g(self.base_terminal), _g(v), _g(g), self.verdict])
        return buf.getvalue()


def _jump_factor_set(x: Trajectory) -> set:
    return set(np.unique(x.jump_factors).tolist())


def _check_same_class(base: Trajectory, other: Trajectory) -> None:
    if not base.same_class_params(other):
        raise InvalidArgument("perturbation has different x0, mu, sigma or horizon than the base path")
    if base.sigma == 0 and base.n_jumps and other.n_jumps:
        # geometric-Poisson members share one jump factor
        if _jump_factor_set(base) | _jump_factor_set(other) != _jump_factor_set(base):
            raise InvalidArgument("perturbation uses a different jump factor than the base path")


def v_continuity_probe(phi: Portfolio, base: Trajectory, perturb, metric: str, n_terms: int,
                       p: PartitionSequence, level: int, gap_threshold: float | None = None,
                       rho: float = 0.0) -> ContinuityReport:
    """Tabulate distances and terminal-value gaps along a perturbation sequence.

    ``perturb`` is a callable ``n -> Trajectory`` (``n = 1..n_terms``) or an
    iterable of trajectories. If the gaps in the second half of the
    sequence stay at or above ``gap_threshold`` (default: half the first
    gap) while distances shrink, the verdict is a witness: one-sided when
    every gap is ``>= -rho``, two-sided otherwise.
    """
    if n_terms < 2:
        raise InvalidArgument("need at least two perturbations")
    if callable(perturb):
        seq = [perturb(n) for n in range(1, n_terms + 1)]
    else:
        seq = list(perturb)[:n_terms]
        if len(seq) < n_terms:
            raise InvalidArgument("perturbation sequence shorter than n_terms")
    for y in seq:
        _check_same_class(base, y)
    dists = np.array([distance(y, base, metric) for y in seq])
    if not dists[-1] < dists[0]:
        raise InvalidArgument("perturbations do not approach the base path")
    v_base = rollout_value(phi, base, p, level).terminal
    terms = np.array([rollout_value(phi, y, p, level).terminal for y in seq])
    gaps = terms - v_base
    thr = 0.5 * abs(gaps[0]) if gap_threshold is None else float(gap_threshold)
    tail = np.abs(gaps[len(gaps) // 2:])
    if thr > 0 and np.all(tail >= thr):
        verdict = "lower_semicontinuity_witness" if np.all(gaps >= -rho) else "discontinuity_witness"
    else:
        verdict = "consistent_with_continuity"
    return ContinuityReport(base, metric, tuple(dists.tolist()), float(v_base), tuple(terms.tolist()),
                            tuple(gaps.tolist()), thr, verdict)


# ---------------------------------------------------------------------------
# class diagnostics


@dataclass(frozen=True)
class C0Report:
    rows: list  # dicts per path
    fraction_passing: float

    @property
    def all_pass(self) -> bool:
        return self.fraction_passing == 1.0


def check_c0_membership(bundle: Sequence[Trajectory], spec: ClassSpec, p: PartitionSequence,
                        qv_band: float = 0.05, exact_tol: float = 1e-12, level: int | None = None) -> C0Report:
    """Per-path checks that a bundle looks like a sample of ``spec``'s class.

    Continuous parts: realized ``<x>_T`` within ``qv_band`` of the
    ``sigma^2 x^2`` integral. Jumps: factors inside the jump law's support.
    Geometric Poisson: the closed form ``x0 e^{mu t} (1+a)^{n(t)}`` at every
    grid node to ``exact_tol`` relative.
    """
    spec.validate()
    rows = []
    for k, x in enumerate(bundle):
        row = {"path": k, "x0_ok": x.x0 == spec.x0}
        sigma = getattr(spec, "sigma", 0.0)
        if isinstance(spec, (ContinuousQV, JumpDiffusion)):
            qv = float(quadratic_variation(x, p, [x.T], level=level).continuous_part[0])
            ref = float(sigma2_x2_integral(x, [x.T], sigma)[0])
            row["qv"] = qv
            row["qv_reference"] = ref
            row["qv_ok"] = abs(qv - ref) <= qv_band * ref
        if isinstance(spec, ContinuousQV):
            row["jumps_ok"] = x.n_jumps == 0
        if isinstance(spec, JumpDiffusion):
            row["jumps_ok"] = bool(np.all(spec.law.contains(x.jump_factors - 1.0))) if x.n_jumps else True
        if isinstance(spec, GeometricPoisson):
            row["jumps_ok"] = bool(np.all(np.abs(x.jump_factors - (1 + spec.a)) <= exact_tol * (1 + abs(spec.a))))
            t = x.grid
            n_t = np.searchsorted(x.jump_times, t, side="right")
            closed = spec.x0 * np.exp(spec.mu * t) * (1 + spec.a) ** n_t
            row["form_ok"] = (x.sigma == 0 and x.mu == spec.mu
                              and bool(np.all(np.abs(x.values(t) - closed) <= exact_tol * closed)))
        row["passed"] = all(v for key, v in row.items() if key.endswith("_ok"))
        rows.append(row)
    frac = sum(r["passed"] for r in rows) / len(rows) if rows else 0.0
    return C0Report(rows, frac)


# ---------------------------------------------------------------------------
# small-ball aggregation


@dataclass(frozen=True)
class SmallBallTable:
    estimates: list

    @property
    def passed(self) -> bool:
        return all(e.wilson_lower_bound > 0 for e in self.estimates)

    def csv(self) -> str:
        from .metrics import SMALL_BALL_HEADER

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SMALL_BALL_HEADER + ["positive"])
        for e in self.estimates:
            row = e.csv_row()
            w.writerow([row[0], row[1], _g(row[2]), row[3], row[4], _g(row[5]), _g(row[6]),
                        int(e.wilson_lower_bound > 0)])
        return buf.getvalue()


def small_ball_table(targets: Sequence[Trajectory], spec: ClassSpec, metric: str, epsilons: Sequence[float],
                     n_samples: int, seed: int, partition: PartitionSequence,
                     log_space: bool = False) -> SmallBallTable:
    """Small-ball estimates over (target, epsilon); passes when every Wilson bound is positive."""
    out: list[SmallBallEstimate] = []
    for i, target in enumerate(targets):
        out += small_ball_grid(target, spec, metric, epsilons, n_samples, seed + i, partition,
                               log_space, target_id=target.label or f"target{i}")
    return SmallBallTable(out)
