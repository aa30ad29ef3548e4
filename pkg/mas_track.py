#!/usr/bin/env python3
"""
Noisy leader-following output tracking: command line

Commands
  validate    standing assumptions, lambda1(L+F), cooperatability verdicts
  synthesize  regulator / GARE / stabilizer / observer gains -> gains.json
  simulate    one Euler-Maruyama trajectory -> trajectory.csv
  montecarlo  mean-square tracking error over many trials -> mse.csv + report
  report      re-evaluate bounds against an existing mse.csv

Usage:
  python mas_track.py validate --preset example-4.1
  python mas_track.py simulate --preset example-4.1 --seed 7 --dt 1e-3 --horizon 30
  python mas_track.py montecarlo --preset example-4.1-noadditive --trials 200 --out out/

Exit status: 0 ok, 1 bound check failed, 2 parse failure, 3 assumption failure,
4 synthesis failure, 5 simulation divergence.
"""

import os
import sys
import json
import math
import logging
from typing import Any, Dict, List

import numpy as np
from jinja2 import Environment, FileSystemLoader, StrictUndefined
from tqdm import tqdm

from analysis import (
    AnalysisError, MseSeries, monte_carlo_mse, plateau_estimate, series_from_csv,
    tracking_time_estimate,
)
from graph import spectral_summary
from numerics import NumericsError, spectrum
from plant import ModelError, check_assumptions
from scenario import (
    ScenarioError, ScenarioFile, build_scenario, dump_gains, load_gains, load_preset,
    load_scenario, synthesize_gains, with_sim,
)
from sde_sim import DivergenceError, SimulationError, simulate
from synthesis import (
    SynthesisError, cooperatability, initial_moments, lambda0_u, regulator_residual,
    tracking_bound, tracking_time_bound, varpi1,
)
from utils.csv_export import write_mse_csv, write_trajectory_csv


log = logging.getLogger("mas_track")

# ------------------------------- Config ---------------------------------------

OUT_DIR = os.getenv("MAS_OUT_DIR", "out")
LOG_LEVEL = os.getenv("MAS_LOG_LEVEL", "INFO")
TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "templates")

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_PARSE = 2
EXIT_ASSUMPTION = 3
EXIT_SYNTHESIS = 4
EXIT_DIVERGENCE = 5

env = Environment(loader=FileSystemLoader(TEMPLATE_DIR), trim_blocks=True, lstrip_blocks=True,
                  undefined=StrictUndefined, keep_trailing_newline=True)


# -------------------------- Small helper utilities ---------------------------

def _jsonable(v: Any) -> Any:
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v

def _emit(out_dir: str, stem: str, template: str, ctx: Dict[str, Any]) -> str:
    os.makedirs(out_dir, exist_ok=True)
    text = env.get_template(template).render(**ctx)
    with open(os.path.join(out_dir, f"{stem}.txt"), "w", encoding="utf-8") as f:
        f.write(text)
    with open(os.path.join(out_dir, f"{stem}.json"), "w", encoding="utf-8") as f:
        json.dump(_jsonable(ctx), f, indent=2)
        f.write("\n")
    sys.stdout.write(text)
    return text

def _fmt(x: float) -> str:
    return "inf" if not math.isfinite(x) else f"{x:.6g}"

def load_input(args) -> ScenarioFile:
    sf = load_preset(args.preset) if args.preset else load_scenario(args.scenario)
    return with_sim(sf, dt=args.dt, horizon=args.horizon, trials=args.trials, seed=args.seed,
                    epsilon=args.epsilon, tail_fraction=args.tail_fraction)

def gains_for(sf: ScenarioFile, args):
    if args.gains:
        return load_gains(args.gains)
    return synthesize_gains(sf, use_overrides=not args.no_overrides)

def is_scalar_star(sf: ScenarioFile) -> bool:
    t = sf.topology
    return (sf.leader.n == 1 and all(f.n == 1 for f in sf.followers)
            and not t.follower_adjacency.any() and bool(t.leader_links.all()))


# -------------------------------- Commands ------------------------------------

def cmd_validate(sf: ScenarioFile, args) -> int:
    report = check_assumptions(sf.leader, sf.followers)
    summary = spectral_summary(sf.topology)
    lu = lambda0_u(sf.leader.A0)
    sigma_sq = sf.noise.sigma_sq_max
    coop = cooperatability(sigma_sq, lu, summary.lambda1)
    scalar = is_scalar_star(sf)
    a0 = float(sf.leader.A0[0, 0]) if scalar else 0.0
    scalar_verdict = cooperatability(sigma_sq, a0, summary.lambda1, scalar=True) if scalar else None
    reference = []
    if sf.synthesis and sf.synthesis.reference:
        ref = sf.synthesis.reference
        for i, f in enumerate(sf.followers, start=1):
            if i in ref.get("Pi", {}) and i in ref.get("Gamma", {}):
                reference.append({"index": i, "residual": regulator_residual(f, sf.leader, ref["Pi"][i], ref["Gamma"][i])})
    ok = report.all_ok and summary.has_spanning_tree and coop and (scalar_verdict is not False)
    ctx = {
        "name": sf.name, "leader_n": sf.leader.n, "p": sf.leader.p,
        "followers": [{"index": i + 1, "stabilizable": report.stabilizable[i], "detectable": report.detectable[i],
                       "regulator_solvable": report.regulator_solvable[i], "controllable": report.controllable[i],
                       "observable": report.observable[i]} for i in range(len(sf.followers))],
        "leader_observable": report.leader_observable,
        "diagnostics": report.failures(),
        "lambda1": summary.lambda1, "spanning_tree": summary.has_spanning_tree,
        "sigma_sq": sigma_sq, "lambda0u": lu, "cooperatable": coop,
        "scalar": scalar, "a0": a0, "scalar_verdict": scalar_verdict,
        "reference": reference, "ok": ok,
    }
    _emit(args.out, "validate", "validate.txt.j2", ctx)
    if not ok:
        for d in report.failures():
            print(f"FAIL: {d}", file=sys.stderr)
        if not coop:
            print("FAIL: cooperatability condition does not hold", file=sys.stderr)
        if scalar_verdict is False:
            print("FAIL: scalar star condition sigma^2*a0 < 1/2 does not hold", file=sys.stderr)
        if not summary.has_spanning_tree:
            print("FAIL: leader does not reach every follower", file=sys.stderr)
        return EXIT_ASSUMPTION
    return EXIT_OK

def cmd_synthesize(sf: ScenarioFile, args) -> int:
    gains = synthesize_gains(sf, use_overrides=not args.no_overrides)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "gains.json")
    dump_gains(gains, path)
    w = gains.window
    ctx = {
        "name": sf.name, "alpha": gains.alpha, "k1": gains.k1, "k2": gains.k2,
        "source": "LQR design" if args.no_overrides else "overrides where given, LQR otherwise",
        "gare_residual": gains.gare.residual if gains.gare else None,
        "p_eigs": [round(float(v), 6) for v in np.linalg.eigvalsh(gains.gare.P)] if gains.gare else [],
        "window_nonempty": bool(w and w.nonempty), "window_lower": w.lower if w else math.nan,
        "window_upper": w.upper if w else math.nan,
        "followers": [{"index": i, "regulator_residual": r.residual,
                       "ctrl_max_real": spectrum(f.A + f.B @ gains.K1[i - 1]).max_real,
                       "obs_max_real": spectrum(f.A - gains.H[i - 1] @ f.C).max_real}
                      for i, (f, r) in enumerate(zip(sf.followers, gains.regulators), start=1)],
        "warnings": gains.warnings,
    }
    _emit(args.out, "synthesis", "synthesis.txt.j2", ctx)
    log.info("wrote %s", path)
    return EXIT_OK

def cmd_simulate(sf: ScenarioFile, args) -> int:
    scenario = build_scenario(sf, gains_for(sf, args))
    rec = simulate(scenario, sf.sim.seed, sf.sim.dt, sf.sim.horizon, stride=args.stride or 1)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "trajectory.csv")
    write_trajectory_csv(rec, path)
    finals = ", ".join(f"err{i}_sq={rec.err_sq(i)[-1]:.4g}" for i in range(1, rec.n_followers + 1))
    print(f"wrote {path}  ({len(rec.times)} rows; final {finals})")
    return EXIT_OK

def evaluate(sf: ScenarioFile, gains, series: MseSeries) -> Dict[str, Any]:
    """Bound comparison: plateau vs limsup bound with additive noise, decay vs t_eps bound without."""
    eps, tail = sf.sim.epsilon, sf.sim.tail_fraction
    ctx: Dict[str, Any] = {
        "name": sf.name, "channel": series.channel, "trials": series.trials, "divergent": series.divergent,
        "points": len(series.times), "t0": float(series.times[0]), "t1": float(series.times[-1]),
        "tail_fraction": tail, "epsilon": eps, "notes": list(gains.warnings), "followers": [],
    }
    ok = series.divergent == 0
    if series.divergent:
        ctx["notes"].append(f"{series.divergent} divergent trial(s) excluded")
    if sf.noise.has_additive:
        ctx["mode"] = "plateau"
        plateau = plateau_estimate(series, tail)
        try:
            w1 = varpi1(sf.noise, gains.G1, gains.G2, gains.gare.P, sf.topology) if gains.gare else math.nan
        except (NumericsError, SynthesisError) as e:
            w1 = math.nan
            ctx["notes"].append(f"varpi1 unavailable: {e}")
        ctx["varpi1"] = w1
        for i, f in enumerate(sf.followers, start=1):
            try:
                bound = tracking_bound(f, gains, i, w1) if math.isfinite(w1) else math.nan
            except (NumericsError, SynthesisError) as e:
                bound = math.nan
                ctx["notes"].append(f"follower {i}: bound unavailable: {e}")
            p_i = float(plateau[i - 1])
            fok = math.isfinite(p_i) and p_i > 0 and math.isfinite(bound) and p_i <= bound
            ok = ok and fok
            ctx["followers"].append({"index": i, "plateau": p_i, "bound": bound, "bound_text": _fmt(bound), "ok": fok})
    else:
        ctx["mode"] = "decay"
        t_est = tracking_time_estimate(series, eps)
        init = sf.initial
        worst = 0.0
        for i, f in enumerate(sf.followers, start=1):
            final = float(series.mean[-1, i - 1])
            try:
                m = initial_moments(init.x0, init.x[i - 1], init.xhat[i - 1], init.xhat0,
                                    gains.regulators[i - 1].Pi)
                tt = tracking_time_bound(f, gains, i, m, eps, sf.noise)
                varpi2, bound = tt.varpi2, tt.t_eps
            except (NumericsError, SynthesisError) as e:
                varpi2 = bound = math.nan
                ctx["notes"].append(f"follower {i}: t_eps bound unavailable: {e}")
            worst = max(worst, bound) if math.isfinite(bound) else math.nan
            fok = final < eps
            ok = ok and fok
            ctx["followers"].append({"index": i, "final": final, "varpi2": varpi2, "varpi2_text": _fmt(varpi2),
                                     "bound": bound, "bound_text": _fmt(bound), "ok": fok})
        ctx["t_eps"] = t_est
        ctx["t_eps_text"] = _fmt(t_est)
        ctx["t_eps_bound"] = worst
        ok = ok and math.isfinite(t_est) and math.isfinite(worst) and t_est <= worst
    ctx["verdict"] = "PASS" if ok else "FAIL"
    return ctx

def cmd_montecarlo(sf: ScenarioFile, args) -> int:
    gains = gains_for(sf, args)
    scenario = build_scenario(sf, gains)
    kw = {"stride": args.stride} if args.stride else {}
    with tqdm(total=sf.sim.trials, unit="trial", disable=not sys.stderr.isatty()) as bar:
        series = monte_carlo_mse(scenario, sf.sim.trials, sf.sim.seed, sf.sim.dt, sf.sim.horizon,
                                 threads=args.threads, on_batch=bar.update, **kw)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "mse.csv")
    write_mse_csv(series, path)
    log.info("wrote %s", path)
    ctx = evaluate(sf, gains, series)
    _emit(args.out, "report", "report.txt.j2", ctx)
    if series.divergent:
        return EXIT_DIVERGENCE
    return EXIT_OK if ctx["verdict"] == "PASS" else EXIT_VERDICT

def cmd_report(sf: ScenarioFile, args) -> int:
    path = args.series or os.path.join(args.out, "mse.csv")
    try:
        series = series_from_csv(path, trials=sf.sim.trials)
    except OSError as e:
        raise ScenarioError(f"{path}: {e.strerror}") from None
    except ValueError as e:
        raise ScenarioError(f"{path}: not an mse series ({e})") from None
    if sf.initial is None:
        raise ScenarioError("initial: section missing (needed for the bounds)")
    if series.n_followers != len(sf.followers):
        raise ScenarioError(f"{path}: {series.n_followers} series for {len(sf.followers)} followers")
    ctx = evaluate(sf, gains_for(sf, args), series)
    ctx["notes"].append(f"series read from {path}; trial counts taken from the scenario")
    _emit(args.out, "report", "report.txt.j2", ctx)
    return EXIT_OK if ctx["verdict"] == "PASS" else EXIT_VERDICT


COMMANDS = {
    "validate": cmd_validate,
    "synthesize": cmd_synthesize,
    "simulate": cmd_simulate,
    "montecarlo": cmd_montecarlo,
    "report": cmd_report,
}


# ---------------------------------- CLI ---------------------------------------

def main(argv: List[str]) -> int:
    import argparse
    ap = argparse.ArgumentParser(description="Leader-following output tracking under communication noise")
    ap.add_argument("command", choices=sorted(COMMANDS))
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--preset", help="built-in scenario (example-4.1, example-4.1-noadditive; aliases aircraft-fleet, aircraft-fleet-noadditive)")
    src.add_argument("--scenario", help="path to a scenario JSON file")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--dt", type=float)
    ap.add_argument("--horizon", type=float)
    ap.add_argument("--trials", type=int)
    ap.add_argument("--epsilon", type=float)
    ap.add_argument("--tail-fraction", type=float)
    ap.add_argument("--stride", type=int, help="record every n-th step")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for Monte Carlo batches")
    ap.add_argument("--gains", help="gains.json from a previous synthesize run")
    ap.add_argument("--no-overrides", action="store_true", help="ignore printed gains, design by LQR")
    ap.add_argument("--series", help="mse.csv to evaluate (report)")
    ap.add_argument("--out", default=OUT_DIR, help="output directory (env MAS_OUT_DIR)")
    args = ap.parse_args(argv)

    logging.basicConfig(level=LOG_LEVEL, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")

    try:
        sf = load_input(args)
    except ScenarioError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    try:
        return COMMANDS[args.command](sf, args)
    except DivergenceError as e:
        print(f"simulation diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ScenarioError, SimulationError, ModelError) as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (SynthesisError, NumericsError) as e:
        print(f"synthesis failed: {e}", file=sys.stderr)
        return EXIT_SYNTHESIS
    except AnalysisError as e:
        print(f"monte carlo failed: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
