"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from pathwise_lab.arbitrage import (
    check_c0_membership, financed, restrict, scan_arbitrage, terminal_above_x0, v_continuity_probe,
)
from pathwise_lab.calculus import Constant, follmer_sum, ito_follmer_residual, power_function
from pathwise_lab.experiments import load_config, run_experiment
from pathwise_lab.hedging import Payoff, build_hedge, grid_for_bundle, replicate, solve_bs_pde, tilde_F
from pathwise_lab.metrics import match_jumps, pairwise_distances, small_ball_grid, small_ball_estimate
from pathwise_lab.partitions import PartitionSequence
from pathwise_lab.paths import (
    ContinuousQV, GeometricPoisson, JumpDiffusion, PoissonJumps, UniformJumpLaw, constant_trajectory,
    generate_bundle, generate_trajectory, poisson_trajectory,
)
from pathwise_lab.portfolio import ConstantHolding, SimpleStrategy

pytestmark = pytest.mark.acceptance

# closed-form Black-Scholes call and delta, x0 = K = 100, sigma = 0.2, r = 0, T = 1
BS_PRICE = 7.965567455405804
# P(sup_{[0,1]} |W| < 1), two-sided boundary non-crossing series
BOUNDARY_SERIES = 0.3707774297995239

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_c01_follmer_telescoping(criterion):
    t0 = time.perf_counter()
    p = PartitionSequence(1.0, max_level=12)
    specs = [ContinuousQV(100.0, 0.2), GeometricPoisson(100.0, 0.05, -0.1, PoissonJumps(2.0)),
             JumpDiffusion(100.0, 0.0, 0.2, UniformJumpLaw(-0.2, 0.2), PoissonJumps(3.0))]
    worst = 0.0
    for k, spec in enumerate(specs):
        x = generate_trajectory(spec, p, 100 + k)
        for c in (1.0, -2.5, 0.37):
            for t in (0.3, 1.0):
                exact = c * (float(x.values(t)) - x.x0)
                for n in range(p.max_level + 1):
                    s = follmer_sum(Constant(c), x, p, n, t)
                    worst = max(worst, abs(s - exact) / max(abs(exact), 1e-300))
    criterion(1, "Follmer telescoping", worst <= 1e-12, f"max relative error {worst:.2e} <= 1e-12",
              time.perf_counter() - t0, 1.0)


def test_c02_ito_follmer_convergence(criterion):
    t0 = time.perf_counter()
    p = PartitionSequence(1.0, max_level=16)
    bundle = generate_bundle(ContinuousQV(100.0, 0.2), p, 32, seed=20240602)
    f = power_function(2)
    levels = (8, 10, 12, 14)
    med = [float(np.median([ito_follmer_residual(f, x, [], p, n) for x in bundle])) for n in levels]
    ok = med[-1] <= 1e-2 * 100.0**2 and all(b <= a for a, b in zip(med, med[1:]))
    detail = "median residuals " + ", ".join(f"L{n}={m:.3g}" for n, m in zip(levels, med)) + " (limit 100 at L14)"
    criterion(2, "Ito-Follmer convergence", ok, detail, time.perf_counter() - t0, 60.0)


def test_c03_qv_class_identity(criterion):
    t0 = time.perf_counter()
    p = PartitionSequence(1.0, max_level=14)
    fracs = {}
    for name, spec in (("bm", ContinuousQV(100.0, 0.2)),
                       ("bm_plus_fbm", ContinuousQV(100.0, 0.2, "bm_plus_fbm", hurst=0.75))):
        bundle = generate_bundle(spec, p, 64, seed=20240603)
        fracs[name] = check_c0_membership(bundle, spec, p, qv_band=0.05).fraction_passing
    ok = all(f >= 0.9 for f in fracs.values())
    detail = ", ".join(f"{k}: {v:.0%} within 5%" for k, v in fracs.items()) + " (need >= 90%)"
    criterion(3, "QV class identity", ok, detail, time.perf_counter() - t0, 120.0)


def test_c04_delta_hedge(criterion):
    t0 = time.perf_counter()
    p = PartitionSequence(1.0, max_level=14)
    h = Payoff("call", 100.0)
    bundle = generate_bundle(ContinuousQV(100.0, 0.2), p, 64, seed=20240604)
    surface = solve_bs_pde(h, 0.2, 0.0, 1.0, grid_for_bundle(bundle, 0.2, 1.0))
    price = surface.value(0.0, 100.0)
    phi = build_hedge("bs", surface=surface, x0=100.0)
    rep = replicate(phi, bundle, h, p, [8, 10, 12, 14], sigma=0.2)
    med = rep.median_errors()
    price_err = abs(price - BS_PRICE) / BS_PRICE
    rel12 = med[2] / price
    ok = price_err <= 1e-3 and rel12 <= 1e-2 and rep.decreasing
    detail = (f"price rel err {price_err:.1e}; median error / premium at L12 {rel12:.4f} <= 0.01; "
              f"medians {', '.join(f'{m:.3g}' for m in med)} decreasing={rep.decreasing}")
    criterion(4, "delta-hedge replication", ok, detail, time.perf_counter() - t0, 300.0)


def test_c05_poisson_hedge(criterion):
    t0 = time.perf_counter()
    p = PartitionSequence(1.0, max_level=12)
    h = Payoff("call", 100.0)
    spec = GeometricPoisson(100.0, 0.05, -0.1, PoissonJumps(0.5))
    bundle = generate_bundle(spec, p, 64, seed=20240605, filter_fn=lambda x: x.n_jumps <= 5)
    phi = build_hedge("poisson", x0=100.0, h=h, mu=0.05, a=-0.1, T=1.0, K_trunc=60)
    rep = replicate(phi, bundle, h, p, [12])
    max_err = float(rep.errors_at(12).max())
    ident = max(abs(tilde_F(t, s, Payoff("stock"), 0.05, -0.1, 1.0)[0] - s)
                for t in (0.0, 0.5, 0.9) for s in (50.0, 100.0, 180.0))
    ok = max_err <= 1e-3 * 100.0 and ident <= 1e-10 * 180.0
    detail = f"max error at L12 {max_err:.2e} <= 0.1; series identity error {ident:.1e}"
    criterion(5, "Poisson-hedge replication", ok, detail, time.perf_counter() - t0, 120.0)


def _continuity(a):
    p = PartitionSequence(1.0, max_level=12)
    g = p.grid(12)
    x0, mu = 10.0, 0.05
    base = poisson_trajectory(x0, mu, a, [0.5], g)
    phi = SimpleStrategy(x0, breakpoints=(0.0, 0.5, 1.0), pieces=(1.0, 0.0))
    seq = lambda n: poisson_trajectory(x0, mu, a, [0.5 + 1 / (n + 9)], g)
    return v_continuity_probe(phi, base, seq, "skorohod", 20, p, 12)


def test_c06_v_continuity_counterexample(criterion):
    t0 = time.perf_counter()
    rep = _continuity(0.1)
    ns = range(10, 30)
    dist_ok = all(d <= 2 / n for n, d in zip(ns, rep.distances))
    gap = 10.0 * math.exp(0.025) * 0.1
    gap_err = max(abs(abs(g) - gap) for g in rep.gaps)
    vals_err = max(abs(rep.base_terminal - 10.0 * math.exp(0.025) * 1.1),
                   max(abs(v - 10.0 * math.exp(0.025)) for v in rep.terminals))
    ok = dist_ok and gap_err <= 1e-10 and vals_err <= 1e-10 and rep.verdict == "discontinuity_witness"
    detail = (f"d_s <= 2/n for n=10..29: {dist_ok}; gap error {gap_err:.1e}; value error {vals_err:.1e}; "
              f"verdict {rep.verdict}")
    criterion(6, "V-continuity counterexample", ok, detail, time.perf_counter() - t0, 10.0)


def test_c07_lower_semicontinuity(criterion):
    t0 = time.perf_counter()
    rep = _continuity(-0.1)
    ok = all(g > 0 for g in rep.gaps) and rep.verdict == "lower_semicontinuity_witness"
    detail = f"min gap {min(rep.gaps):.6f} > 0; verdict {rep.verdict}"
    criterion(7, "lower-semicontinuity variant", ok, detail, time.perf_counter() - t0, 10.0)


def test_c08_small_ball(criterion):
    t0 = time.perf_counter()
    n = 100_000
    p8 = PartitionSequence(1.0, max_level=8)
    bm = ContinuousQV(100.0, 0.2)
    target = generate_trajectory(bm, p8, 20240608)
    bm_est = small_ball_grid(target, bm, "uniform", [15.0, 25.0, 40.0], n, seed=1, partition=p8)
    p6 = PartitionSequence(1.0, max_level=6)
    gp = GeometricPoisson(100.0, 0.05, -0.1, PoissonJumps(2.0))
    two = poisson_trajectory(100.0, 0.05, -0.1, [0.3, 0.7], p6.grid(6))
    gp_est = small_ball_grid(two, gp, "skorohod", [5.0, 10.0, 20.0], n, seed=2, partition=p6)
    p16 = PartitionSequence(1.0, max_level=16)
    const = constant_trajectory(1.0, p16.grid(16))
    series = small_ball_estimate(const, ContinuousQV(1.0, 1.0), "uniform", 1.0, 10_000, seed=20240607,
                                 partition=p16, log_space=True)
    series_gap = abs(series.hit_fraction - BOUNDARY_SERIES)
    se = math.sqrt(BOUNDARY_SERIES * (1 - BOUNDARY_SERIES) / series.n_samples)
    ok = all(e.wilson_lower_bound > 0 for e in bm_est + gp_est) and series_gap <= 3 * se
    detail = ("Wilson lower bounds bm " + ", ".join(f"{e.wilson_lower_bound:.3f}" for e in bm_est)
              + "; poisson " + ", ".join(f"{e.wilson_lower_bound:.3f}" for e in gp_est)
              + f"; series {series.hit_fraction:.4f} vs {BOUNDARY_SERIES:.4f} (3SE {3 * se:.4f})")
    criterion(8, "small-ball evidence", ok, detail, time.perf_counter() - t0, 300.0)


def test_c09_arbitrage_scanner(criterion):
    t0 = time.perf_counter()
    p = PartitionSequence(1.0, max_level=10)
    bundle = generate_bundle(ContinuousQV(100.0, 0.2), p, 1000, seed=20240609)
    winners = restrict(bundle, terminal_above_x0)
    v1 = scan_arbitrage(ConstantHolding(0.0, units=1.0), winners, p, 10, 1e-9)
    v2 = scan_arbitrage(ConstantHolding(0.0, units=0.0), bundle, p, 10, 1e-9)
    h = Payoff("call", 100.0)
    surface = solve_bs_pde(h, 0.2, 0.0, 1.0, grid_for_bundle(bundle, 0.2, 1.0))
    v3 = scan_arbitrage(financed(build_hedge("bs", surface=surface, x0=100.0)), bundle, p, 10, 1e-9)
    ok = (v1.outcome == "arbitrage_found" and v2.outcome == "no_arbitrage_in_bundle"
          and v3.outcome == "no_arbitrage_in_bundle" and v3.n_positive > 0 and v3.n_negative > 0)
    detail = (f"buy-and-hold on winners: {v1.outcome}; zero: {v2.outcome}; delta-hedge minus price: "
              f"{v3.outcome} ({v3.n_positive} up / {v3.n_negative} down)")
    criterion(9, "arbitrage scanner", ok, detail, time.perf_counter() - t0, 120.0)


def test_c10_metric_axioms_and_matching(criterion):
    t0 = time.perf_counter()
    p = PartitionSequence(1.0, max_level=8)
    specs = [ContinuousQV(100.0, 0.2), GeometricPoisson(100.0, 0.05, -0.1, PoissonJumps(2.0)),
             JumpDiffusion(100.0, 0.0, 0.2, UniformJumpLaw(-0.2, 0.2), PoissonJumps(3.0))]
    bundle = [generate_trajectory(specs[k % 3], p, 500 + k) for k in range(16)]
    worst_sym = worst_tri = 0.0
    for metric in ("uniform", "skorohod"):
        D = pairwise_distances(bundle, metric)
        worst_sym = max(worst_sym, float(np.max(np.abs(D - D.T))))
        worst_tri = max(worst_tri, float(np.max(D[:, None, :] - D[:, :, None] - D[None, :, :])))
    gp = specs[1]
    n_match = bad = 0
    for k in range(200):
        x = generate_trajectory(gp, p, 900 + k)
        shift = 1e-3 * (1 + k % 7)
        if not x.n_jumps or x.jump_times[-1] + shift >= 1.0:
            continue
        y = poisson_trajectory(100.0, 0.05, -0.1, x.jump_times + shift, x.grid)
        for eps in (0.01, 0.05, 0.2, 1.0):
            m = match_jumps(x, y, eps)
            if m is not None:
                n_match += 1
                bad += m.max_size_gap >= 2 * eps
    ok = worst_sym <= 1e-12 and worst_tri <= 1e-9 and n_match > 0 and bad == 0
    detail = (f"max asymmetry {worst_sym:.1e}; max triangle excess {worst_tri:.1e}; "
              f"{n_match} matches, {bad} with size gap >= 2 eps")
    criterion(10, "metric axioms and jump matching", ok, detail, time.perf_counter() - t0, 60.0)


def test_c11_determinism(criterion, tmp_path):
    t0 = time.perf_counter()
    mismatched = []
    names = sorted(CONFIGS.glob("*.json"))
    for f in names:
        cfg = load_config(str(f))
        runs = [run_experiment(cfg, tmp_path / f"{f.stem}_{i}") for i in range(2)]
        if any(r.exit_code != 0 for r in runs):
            mismatched.append(f"{f.stem} (exit {runs[0].exit_code})")
            continue
        for csv_name in runs[0].manifest["outputs"]:
            if (runs[0].output_dir / csv_name).read_bytes() != (runs[1].output_dir / csv_name).read_bytes():
                mismatched.append(f"{f.stem}/{csv_name}")
    ok = not mismatched and len(names) >= 7
    detail = f"{len(names)} configs rerun; mismatches: {', '.join(mismatched) or 'none'}"
    criterion(11, "determinism", ok, detail, time.perf_counter() - t0, 300.0)
