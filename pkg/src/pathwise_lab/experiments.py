"""JSON experiment configs and the runners behind the ``pathwise-lab`` CLI.

A config is one JSON object. Unknown keys are rejected, every default is
filled in before the run, and the filled config is echoed to the manifest.
"""

from __future__ import annotations

import copy
import dataclasses
import csv
import io
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .arbitrage import (check_c0_membership, financed, rational_terminal, restrict, scan_arbitrage,
                        small_ball_table, terminal_above_x0, terminal_values, v_continuity_probe)
from .calculus import ito_follmer_residual, power_function, quadratic_variation, sigma2_x2_integral
from .errors import InvalidArgument
from .hedging import Payoff, build_hedge, grid_for_bundle, replicate, solve_bs_pde
from .partitions import PartitionSequence
from .paths import (ContinuousQV, DiscreteJumpLaw, ExplicitJumps, ExponentialGaps, GammaGaps,
                    GeometricPoisson, JumpDiffusion, LogNormalJumpLaw, ParetoGaps, PoissonJumps,
                    RationalGaps, RenewalJumps, UniformJumpLaw, constant_trajectory, generate_bundle,
                    generate_trajectory, poisson_trajectory)
from .portfolio import ConstantHolding, SimpleStrategy

EXPERIMENTS = ("replicate_bs", "replicate_poisson", "ito_residual", "qv_profile", "smallball",
               "v_continuity", "arbitrage_scan")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID, EXIT_PRECONDITION = 0, 1, 2, 3


class PreconditionFailed(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# schema

COMMON = {
    "experiment": None,
    "seed": None,
    "output_dir": "pathwise_out",
    "partition": {"T": 1.0, "rule": "dyadic", "max_level": 14, "base": 2},
    "levels": [8, 10, 12, 14],
    "bundle_size": 32,
}

PER_EXPERIMENT = {
    "replicate_bs": {
        "class": {"type": "continuous_qv", "x0": 100.0, "sigma": 0.2},
        "payoff": {"kind": "call", "strike": 100.0},
        "r": 0.0,
        "pde": {"n_space": 1600, "n_time": 1000, "width": 6.0},
    },
    "replicate_poisson": {
        "class": {"type": "geometric_poisson", "x0": 100.0, "mu": 0.05, "a": -0.1,
                  "jumps": {"type": "poisson", "rate": 0.5}},
        "payoff": {"kind": "call", "strike": 100.0},
        "K_trunc": 60,
        "max_jumps": 5,
    },
    "ito_residual": {
        "class": {"type": "continuous_qv", "x0": 100.0, "sigma": 0.2},
        "power": 2.0,
    },
    "qv_profile": {
        "class": {"type": "continuous_qv", "x0": 100.0, "sigma": 0.2},
        "eval_times": [0.25, 0.5, 0.75, 1.0],
    },
    "smallball": {
        "class": {"type": "continuous_qv", "x0": 100.0, "sigma": 0.2},
        "target": {"type": "generated", "seed": 1},
        "metric": "uniform",
        "epsilons": [15.0, 25.0, 40.0],
        "n_samples": 1000,
        "log_space": False,
    },
    "v_continuity": {
        "class": {"type": "geometric_poisson", "x0": 10.0, "mu": 0.05, "a": 0.1,
                  "jumps": {"type": "explicit", "times": [0.5]}},
        "portfolio": {"kind": "simple", "V0": 10.0, "breakpoints": [0.0, 0.5, 1.0], "pieces": [1.0, 0.0]},
        "metric": "skorohod",
        "perturbation": {"start": 10, "n_terms": 20},
        "level": 12,
    },
    "arbitrage_scan": {
        "class": {"type": "continuous_qv", "x0": 100.0, "sigma": 0.2},
        "portfolio": {"kind": "constant", "units": 1.0, "V0": 0.0},
        "restriction": "none",
        "level": 12,
        "tol": 1e-9,
    },
}

CLASS_KEYS = {
    "continuous_qv": {"type", "x0", "sigma", "mu", "generator", "hurst", "rho", "bound"},
    "geometric_poisson": {"type", "x0", "mu", "a", "jumps"},
    "jump_diffusion": {"type", "x0", "mu", "sigma", "law", "jumps", "generator", "hurst", "rho", "bound"},
}


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if key not in defaults:
            raise InvalidArgument(f"unknown key {where}{key!r}")
        if isinstance(defaults[key], dict) and key in ("partition", "pde", "perturbation"):
            if not isinstance(value, dict):
                raise InvalidArgument(f"{where}{key} must be an object")
            out[key] = _merge(defaults[key], value, f"{where}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(source: str | Path | dict) -> dict:
    """Parse, fill defaults and validate; returns the complete config."""
    if isinstance(source, dict):
        raw = source
    else:
        try:
            raw = json.loads(Path(source).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"config is not valid JSON: {exc}") from exc
        except OSError as exc:
            raise InvalidArgument(f"cannot read config: {exc}") from exc
    if not isinstance(raw, dict):
        raise InvalidArgument("config must be a JSON object")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise InvalidArgument(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    cfg = _merge({**COMMON, **PER_EXPERIMENT[exp]}, raw, "")
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg.get("seed"), int) or isinstance(cfg.get("seed"), bool) or cfg["seed"] < 0:
        raise InvalidArgument("seed is mandatory and must be a non-negative integer")
    p = make_partition(cfg)
    levels = cfg["levels"]
    if not levels or any(not isinstance(n, int) or not 0 <= n <= p.max_level for n in levels):
        raise InvalidArgument("levels must be integers within the partition's range")
    if sorted(set(levels)) != list(levels):
        raise InvalidArgument("levels must be strictly increasing")
    if not isinstance(cfg["bundle_size"], int) or cfg["bundle_size"] < 1:
        raise InvalidArgument("bundle_size must be a positive integer")
    make_class(cfg["class"]).validate()
    if "payoff" in cfg:
        make_payoff(cfg["payoff"])
    if "portfolio" in cfg:
        make_portfolio(cfg["portfolio"])
    exp = cfg["experiment"]
    if exp == "replicate_bs" and (cfg["class"]["type"] != "continuous_qv" or cfg["r"] < 0):
        raise InvalidArgument("replicate_bs needs a continuous_qv class and r >= 0")
    if exp == "replicate_poisson":
        c = cfg["class"]
        if c["type"] != "geometric_poisson" or not c["a"] * c["mu"] < 0:
            raise InvalidArgument("replicate_poisson needs a geometric_poisson class with a*mu < 0")
        if cfg["K_trunc"] < 1 or cfg["max_jumps"] < 0:
            raise InvalidArgument("K_trunc must be >= 1 and max_jumps >= 0")
    if exp == "smallball":
        if cfg["metric"] not in ("uniform", "skorohod"):
            raise InvalidArgument("metric must be uniform or skorohod")
        if not cfg["epsilons"] or any(not e > 0 for e in cfg["epsilons"]):
            raise InvalidArgument("epsilons must be positive")
        if cfg["n_samples"] < 1:
            raise InvalidArgument("n_samples must be positive")
        if cfg["target"].get("type") not in ("generated", "constant", "explicit_jumps"):
            raise InvalidArgument("target.type must be generated, constant or explicit_jumps")
    if exp == "v_continuity":
        if cfg["class"]["type"] != "geometric_poisson" or cfg["class"]["jumps"]["type"] != "explicit":
            raise InvalidArgument("v_continuity needs a geometric_poisson class with explicit base jump times")
        per = cfg["perturbation"]
        if per["start"] < 1 or per["n_terms"] < 2:
            raise InvalidArgument("perturbation needs start >= 1 and n_terms >= 2")
        if not 0 <= cfg["level"] <= p.max_level:
            raise InvalidArgument("level outside the partition's range")
    if exp == "arbitrage_scan":
        if cfg["restriction"] not in ("none", "terminal_above_x0", "rational_terminal"):
            raise InvalidArgument("restriction must be none, terminal_above_x0 or rational_terminal")
        if cfg["tol"] < 0 or not 0 <= cfg["level"] <= p.max_level:
            raise InvalidArgument("tol must be >= 0 and level inside the partition's range")
    if exp == "qv_profile" and any(not 0 <= t <= p.T for t in cfg["eval_times"]):
        raise InvalidArgument("eval_times must lie in [0, T]")


# ---------------------------------------------------------------------------
# builders


def make_partition(cfg: dict) -> PartitionSequence:
    pc = cfg["partition"]
    return PartitionSequence(float(pc["T"]), pc["rule"], int(pc["max_level"]), int(pc["base"]))


def _jumps(spec: dict):
    kind = spec.get("type")
    if kind == "poisson":
        return PoissonJumps(float(spec["rate"]))
    if kind == "explicit":
        return ExplicitJumps(tuple(float(t) for t in spec["times"]))
    if kind == "renewal":
        g = spec["gaps"]
        law = g.get("law")
        if law == "exponential":
            return RenewalJumps(ExponentialGaps(float(g["rate"])))
        if law == "gamma":
            return RenewalJumps(GammaGaps(float(g["shape"]), float(g["scale"])))
        if law == "pareto":
            return RenewalJumps(ParetoGaps(float(g["beta"]), float(g.get("scale", 1.0))))
        if law == "rational":
            return RenewalJumps(RationalGaps(float(g["rate"]), int(g.get("denominator", 1000))))
        raise InvalidArgument(f"unknown gap law {law!r}")
    raise InvalidArgument(f"unknown jump source {kind!r}")


def _law(spec: dict):
    kind = spec.get("type")
    if kind == "uniform":
        return UniformJumpLaw(float(spec["low"]), float(spec["high"]))
    if kind == "lognormal":
        return LogNormalJumpLaw(float(spec["mean"]), float(spec["std"]))
    if kind == "discrete":
        probs = spec.get("probs")
        return DiscreteJumpLaw(tuple(spec["values"]), None if probs is None else tuple(probs))
    raise InvalidArgument(f"unknown jump-size law {kind!r}")


def make_class(spec: dict):
    kind = spec.get("type")
    if kind not in CLASS_KEYS:
        raise InvalidArgument(f"class.type must be one of {', '.join(CLASS_KEYS)}")
    extra = set(spec) - CLASS_KEYS[kind]
    if extra:
        raise InvalidArgument(f"unknown class keys {sorted(extra)}")
    try:
        if kind == "continuous_qv":
            return ContinuousQV(float(spec["x0"]), float(spec["sigma"]), spec.get("generator", "bm"),
                                spec.get("hurst"), spec.get("rho"), spec.get("bound"), float(spec.get("mu", 0.0)))
        if kind == "geometric_poisson":
            return GeometricPoisson(float(spec["x0"]), float(spec["mu"]), float(spec["a"]), _jumps(spec["jumps"]))
        return JumpDiffusion(float(spec["x0"]), float(spec.get("mu", 0.0)), float(spec["sigma"]), _law(spec["law"]),
                             _jumps(spec["jumps"]), spec.get("generator", "bm"), spec.get("hurst"),
                             spec.get("rho"), spec.get("bound"))
    except KeyError as exc:
        raise InvalidArgument(f"class spec is missing {exc}") from exc


def make_payoff(spec: dict) -> Payoff:
    try:
        return Payoff(spec["kind"], spec.get("strike"), tuple(spec.get("table_x", ())),
                      tuple(spec.get("table_h", ())), spec.get("lipschitz"))
    except KeyError as exc:
        raise InvalidArgument(f"payoff is missing {exc}") from exc


def make_portfolio(spec: dict):
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantHolding(V0=float(spec.get("V0", 0.0)), r=float(spec.get("r", 0.0)),
                               units=float(spec.get("units", 0.0)))
    if kind == "simple":
        return SimpleStrategy(V0=float(spec.get("V0", 0.0)), r=float(spec.get("r", 0.0)),
                              breakpoints=tuple(spec["breakpoints"]), pieces=tuple(float(v) for v in spec["pieces"]))
    if kind == "delta_hedge_financed":
        return None  # built at run time from the surface
    raise InvalidArgument(f"unknown portfolio kind {kind!r}")


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer, str)):
        return str(v)
    return format(float(v), ".17g")


def write_csv(path: Path, header: list, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# runners


def _bundle(cfg, p, filter_fn=None):
    return generate_bundle(make_class(cfg["class"]), p, cfg["bundle_size"], cfg["seed"], filter_fn)


def _run_replicate_bs(cfg, p, out: Path) -> dict:
    spec = make_class(cfg["class"])
    bundle = _bundle(cfg, p)
    h = make_payoff(cfg["payoff"])
    pde = cfg["pde"]
    grid = grid_for_bundle(bundle, spec.sigma, p.T, n_space=pde["n_space"], n_time=pde["n_time"], width=pde["width"])
    surface = solve_bs_pde(h, spec.sigma, cfg["r"], p.T, grid)
    phi = build_hedge("bs", surface=surface, x0=spec.x0)
    report = replicate(phi, bundle, h, p, cfg["levels"], sigma=spec.sigma)
    (out / "hedge_rows.csv").write_text(report.rows_csv())
    (out / "hedge_summary.csv").write_text(report.summary_csv())
    return {"V0": phi.V0, "decreasing": report.decreasing, "warnings": report.warnings + surface.meta["warnings"]}


def _run_replicate_poisson(cfg, p, out: Path) -> dict:
    spec = make_class(cfg["class"])
    bundle = _bundle(cfg, p, lambda x: x.n_jumps <= cfg["max_jumps"])
    h = make_payoff(cfg["payoff"])
    phi = build_hedge("poisson", h=h, mu=spec.mu, a=spec.a, T=p.T, x0=spec.x0, K_trunc=cfg["K_trunc"])
    report = replicate(phi, bundle, h, p, cfg["levels"])
    (out / "hedge_rows.csv").write_text(report.rows_csv())
    (out / "hedge_summary.csv").write_text(report.summary_csv())
    return {"V0": phi.V0, "decreasing": report.decreasing}


def _run_ito_residual(cfg, p, out: Path) -> dict:
    bundle = _bundle(cfg, p)
    f = power_function(float(cfg["power"]))
    rows = []
    for k, x in enumerate(bundle):
        for n in cfg["levels"]:
            rows.append((k, n, ito_follmer_residual(f, x, [], p, n)))
    write_csv(out / "ito_residual.csv", ["path_id", "level", "residual"], rows)
    summary = [(n, float(np.median([r[2] for r in rows if r[1] == n]))) for n in cfg["levels"]]
    write_csv(out / "ito_residual_summary.csv", ["level", "median_residual"], summary)
    med = [s[1] for s in summary]
    return {"non_increasing": all(b <= a for a, b in zip(med, med[1:]))}


def _run_qv_profile(cfg, p, out: Path) -> dict:
    spec = make_class(cfg["class"])
    bundle = _bundle(cfg, p)
    times = np.asarray(cfg["eval_times"], dtype=float)
    sigma = getattr(spec, "sigma", 0.0)
    rows = []
    for k, x in enumerate(bundle):
        q = quadratic_variation(x, p, times)
        ref = sigma2_x2_integral(x, times, sigma)
        for i, t in enumerate(times):
            rows.append((k, t, q.total[i], q.continuous_part[i], q.atomic_part[i], ref[i]))
    write_csv(out / "qv_profile.csv", ["path_id", "t", "total", "continuous", "atomic", "sigma2_x2_integral"], rows)
    c0 = check_c0_membership(bundle, spec, p)
    return {"c0_fraction_passing": c0.fraction_passing}


def _smallball_target(cfg, p, spec):
    t = cfg["target"]
    grid = p.grid(p.max_level)
    if t["type"] == "generated":
        x = generate_trajectory(spec, p, int(t.get("seed", 1)))
    elif t["type"] == "constant":
        x = constant_trajectory(float(t.get("value", spec.x0)), grid)
    else:
        x = poisson_trajectory(spec.x0, spec.mu, spec.a, t["times"], grid)
    return x


def _run_smallball(cfg, p, out: Path) -> dict:
    spec = make_class(cfg["class"])
    target = dataclasses.replace(_smallball_target(cfg, p, spec), label=cfg["target"]["type"])
    table = small_ball_table([target], spec, cfg["metric"], cfg["epsilons"], cfg["n_samples"], cfg["seed"], p,
                             cfg["log_space"])
    (out / "smallball.csv").write_text(table.csv())
    return {"all_positive": table.passed}


def _run_v_continuity(cfg, p, out: Path) -> dict:
    c = cfg["class"]
    grid = p.grid(p.max_level)
    base_times = [float(t) for t in c["jumps"]["times"]]
    start = cfg["perturbation"]["start"]

    def perturbed(n):
        shift = 1.0 / (n + start - 1)
        return poisson_trajectory(c["x0"], c["mu"], c["a"], [t + shift for t in base_times], grid)

    base = poisson_trajectory(c["x0"], c["mu"], c["a"], base_times, grid)
    phi = make_portfolio(cfg["portfolio"])
    rep = v_continuity_probe(phi, base, perturbed, cfg["metric"], cfg["perturbation"]["n_terms"], p, cfg["level"])
    (out / "continuity.csv").write_text(rep.csv())
    return {"verdict": rep.verdict}


def _run_arbitrage_scan(cfg, p, out: Path) -> dict:
    spec = make_class(cfg["class"])
    bundle = _bundle(cfg, p)
    pc = cfg["portfolio"]
    if pc["kind"] == "delta_hedge_financed":
        h = make_payoff(pc.get("payoff", {"kind": "call", "strike": spec.x0}))
        grid = grid_for_bundle(bundle, spec.sigma, p.T)
        surface = solve_bs_pde(h, spec.sigma, float(pc.get("r", 0.0)), p.T, grid)
        phi = financed(build_hedge("bs", surface=surface, x0=spec.x0))
    else:
        phi = make_portfolio(pc)
    if cfg["restriction"] == "terminal_above_x0":
        bundle = restrict(bundle, terminal_above_x0)
    elif cfg["restriction"] == "rational_terminal":
        bundle = rational_terminal(bundle)
    if not bundle:
        raise PreconditionFailed("restriction left an empty bundle")
    verdict = scan_arbitrage(phi, bundle, p, cfg["level"], cfg["tol"])
    (out / "arbitrage_verdict.csv").write_text(verdict.csv())
    if verdict.outcome != "precondition_failed":
        vt = terminal_values(phi, bundle, p, cfg["level"])
        write_csv(out / "arbitrage_terminals.csv", ["path_id", "terminal"], enumerate(vt))
    if verdict.outcome == "precondition_failed":
        raise PreconditionFailed(verdict.reason)
    return {"outcome": verdict.outcome, "reason": verdict.reason}


RUNNERS = {
    "replicate_bs": _run_replicate_bs,
    "replicate_poisson": _run_replicate_poisson,
    "ito_residual": _run_ito_residual,
    "qv_profile": _run_qv_profile,
    "smallball": _run_smallball,
    "v_continuity": _run_v_continuity,
    "arbitrage_scan": _run_arbitrage_scan,
}


@dataclass
class RunResult:
    exit_code: int
    output_dir: Path
    manifest: dict


def run_experiment(cfg: dict, out: str | Path | None = None, threads: int = 1) -> RunResult:
    """Run a validated config; always writes ``manifest.json`` into the output directory."""
    out = Path(out if out is not None else cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    manifest: dict[str, Any] = {"config": cfg, "version": __version__, "threads": threads}
    code = EXIT_OK
    try:
        p = make_partition(cfg)
        manifest["result"] = RUNNERS[cfg["experiment"]](cfg, p, out)
        manifest["status"] = "completed"
    except PreconditionFailed as exc:
        manifest["status"] = "precondition_failed"
        manifest["error"] = str(exc)
        code = EXIT_PRECONDITION
    except Exception as exc:  # noqa: BLE001 - any runtime failure becomes a manifest entry
        manifest["status"] = "runtime_error"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        code = EXIT_RUNTIME
    manifest["wall_time_s"] = round(time.perf_counter() - start, 3)
    manifest["outputs"] = sorted(f.name for f in out.iterdir() if f.suffix == ".csv")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return RunResult(code, out, manifest)


def _json_default(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    if isinstance(v, float) and math.isnan(v):
        return None
    raise TypeError(f"cannot serialize {type(v).__name__}")
