#!/usr/bin/env python3
"""
Scenario files (JSON) and presets.

Sections: leader {A0, C0}; followers [{A, B, C}]; topology {adjacency, leader_links};
noise {additive {"i-j": [..]}, multiplicative {"i-j": s}}; initial {x0, followers [{x, xhat, xhat0}]};
synthesis {alpha, k1, k2, overrides {K1, H, Pi, Gamma, G1, G2}, reference {Pi, Gamma}};
sim {dt, horizon, trials, seed, epsilon, tail_fraction}.

Matrices are row lists. Edge keys are "i-j" with j = 0 for the leader link.
Unknown keys are rejected; errors name the section path.
"""

import os
import json
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from graph import Topology, TopologyError, build_topology
from numerics import NumericsError, as_matrix, as_vector
from plant import FollowerModel, LeaderModel, ModelError, NoiseModel, check_noise_edges
from sde_sim import InitialState, Scenario
from synthesis import (
    GainOverrides, GainSet, GainWindow, GareSolution, RegulatorSolution,
    assemble_gains, check_regulator, solve_regulator,
)


log = logging.getLogger(__name__)

# ------------------------------- Config ---------------------------------------

PRESET_DIR = os.getenv("MAS_PRESET_DIR", os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets"))

# preset name -> (file, zero the additive noise)
PRESETS = {
    "example-4.1": ("example-4.1.json", False),
    "example-4.1-noadditive": ("example-4.1.json", True),
}
PRESET_ALIASES = {
    "aircraft-fleet": "example-4.1",
    "aircraft-fleet-noadditive": "example-4.1-noadditive",
}

SIM_DEFAULTS = {"dt": 1e-3, "horizon": 30.0, "trials": 200, "seed": 0, "epsilon": 1e-2, "tail_fraction": 0.25}


class ScenarioError(ValueError):
    pass


@dataclass
class SynthesisConfig:
    alpha: float
    k1: float
    k2: float
    overrides: GainOverrides = field(default_factory=GainOverrides)
    reference: Dict[str, Dict[int, np.ndarray]] = field(default_factory=dict)


@dataclass
class SimConfig:
    dt: float = SIM_DEFAULTS["dt"]
    horizon: float = SIM_DEFAULTS["horizon"]
    trials: int = SIM_DEFAULTS["trials"]
    seed: int = SIM_DEFAULTS["seed"]
    epsilon: float = SIM_DEFAULTS["epsilon"]
    tail_fraction: float = SIM_DEFAULTS["tail_fraction"]


@dataclass(eq=False)
class ScenarioFile:
    leader: LeaderModel
    followers: List[FollowerModel]
    topology: Topology
    noise: NoiseModel = field(default_factory=NoiseModel)
    initial: Optional[InitialState] = None
    synthesis: Optional[SynthesisConfig] = None
    sim: SimConfig = field(default_factory=SimConfig)
    name: str = ""


# -------------------------- Small helper utilities ---------------------------

def _keys(d: Any, allowed: Tuple[str, ...], path: str, required: Tuple[str, ...] = ()) -> Dict[str, Any]:
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: expected an object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ScenarioError(f"{path}: unknown key(s) {unknown}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ScenarioError(f"{path}: missing key(s) {missing}")
    return d

def _object(d: Any, path: str) -> Dict[str, Any]:
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: expected an object")
    return d

def _matrix(v: Any, path: str) -> np.ndarray:
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        raise ScenarioError(f"{path}: matrix must be a non-empty list of rows")
    if len({len(r) for r in v}) != 1:
        raise ScenarioError(f"{path}: rows have unequal lengths {[len(r) for r in v]}")
    try:
        return as_matrix(v, path)
    except NumericsError as e:
        raise ScenarioError(str(e)) from None

def _vector(v: Any, path: str) -> np.ndarray:
    if not isinstance(v, list):
        raise ScenarioError(f"{path}: expected a list")
    try:
        return as_vector(v, path)
    except NumericsError as e:
        raise ScenarioError(str(e)) from None

def _number(v: Any, path: str, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{path}: expected a number")
    if kind is int and float(v) != int(v):
        raise ScenarioError(f"{path}: expected an integer")
    return kind(v)

def _edge(key: str, path: str) -> Tuple[int, int]:
    try:
        i, j = (int(s) for s in key.split("-"))
    except ValueError:
        raise ScenarioError(f"{path}: edge key {key!r} must look like 'i-j'") from None
    return i, j

def _indexed(d: Any, path: str) -> Dict[int, np.ndarray]:
    if not isinstance(d, dict):
        raise ScenarioError(f"{path}: expected an object keyed by follower index")
    out = {}
    for k, v in d.items():
        try:
            i = int(k)
        except ValueError:
            raise ScenarioError(f"{path}: key {k!r} is not a follower index") from None
        out[i] = _matrix(v, f"{path}.{k}")
    return out


# --------------------------------- Parsing ------------------------------------

def parse_scenario(doc: Any, name: str = "") -> ScenarioFile:
    _keys(doc, ("leader", "followers", "topology", "noise", "initial", "synthesis", "sim"), "scenario",
          required=("leader", "followers", "topology"))
    try:
        ld = _keys(doc["leader"], ("A0", "C0"), "leader", required=("A0", "C0"))
        leader = LeaderModel(_matrix(ld["A0"], "leader.A0"), _matrix(ld["C0"], "leader.C0"))

        if not isinstance(doc["followers"], list) or not doc["followers"]:
            raise ScenarioError("followers: expected a non-empty list")
        followers = []
        for i, fd in enumerate(doc["followers"], start=1):
            path = f"followers[{i}]"
            _keys(fd, ("A", "B", "C"), path, required=("A", "B", "C"))
            try:
                followers.append(FollowerModel(_matrix(fd["A"], f"{path}.A"), _matrix(fd["B"], f"{path}.B"),
                                               _matrix(fd["C"], f"{path}.C")))
            except ModelError as e:
                raise ScenarioError(f"{path}: {e}") from None
            if followers[-1].p != leader.p:
                raise ScenarioError(f"{path}.C: output dimension {followers[-1].p} differs from leader p={leader.p}")

        td = _keys(doc["topology"], ("adjacency", "leader_links"), "topology", required=("adjacency", "leader_links"))
        try:
            topology = build_topology(td["adjacency"], td["leader_links"])
        except TopologyError as e:
            raise ScenarioError(f"topology: {e}") from None
        if topology.n_followers != len(followers):
            raise ScenarioError(f"topology: {topology.n_followers} followers, but {len(followers)} models given")

        noise = NoiseModel()
        if "noise" in doc:
            nd = _keys(doc["noise"], ("additive", "multiplicative"), "noise")
            add = {_edge(k, "noise.additive"): _vector(v, f"noise.additive.{k}")
                   for k, v in _object(nd.get("additive", {}), "noise.additive").items()}
            mul = {_edge(k, "noise.multiplicative"): _number(v, f"noise.multiplicative.{k}")
                   for k, v in _object(nd.get("multiplicative", {}), "noise.multiplicative").items()}
            noise = NoiseModel(add, mul)
            try:
                check_noise_edges(noise, topology, leader.p)
            except ModelError as e:
                raise ScenarioError(f"noise: {e}") from None

        initial = _parse_initial(doc["initial"], len(followers)) if "initial" in doc else None
        synthesis = _parse_synthesis(doc["synthesis"]) if "synthesis" in doc else None

        sim = SimConfig()
        if "sim" in doc:
            sd = _keys(doc["sim"], tuple(SIM_DEFAULTS), "sim")
            sim = SimConfig(**{k: _number(v, f"sim.{k}", int if k in ("trials", "seed") else float)
                               for k, v in sd.items()})
    except ModelError as e:
        raise ScenarioError(str(e)) from None
    return ScenarioFile(leader, followers, topology, noise, initial, synthesis, sim, name)

def _parse_initial(d: Any, n_followers: int) -> InitialState:
    _keys(d, ("x0", "followers"), "initial", required=("x0", "followers"))
    fs = d["followers"]
    if not isinstance(fs, list) or len(fs) != n_followers:
        raise ScenarioError(f"initial.followers: expected {n_followers} entries")
    x, xhat, xhat0 = [], [], []
    for i, fd in enumerate(fs, start=1):
        path = f"initial.followers[{i}]"
        _keys(fd, ("x", "xhat", "xhat0"), path, required=("x", "xhat", "xhat0"))
        x.append(_vector(fd["x"], f"{path}.x"))
        xhat.append(_vector(fd["xhat"], f"{path}.xhat"))
        xhat0.append(_vector(fd["xhat0"], f"{path}.xhat0"))
    return InitialState(_vector(d["x0"], "initial.x0"), tuple(x), tuple(xhat), tuple(xhat0))

def _parse_synthesis(d: Any) -> SynthesisConfig:
    _keys(d, ("alpha", "k1", "k2", "overrides", "reference"), "synthesis", required=("alpha", "k1", "k2"))
    ov = GainOverrides()
    if "overrides" in d:
        od = _keys(d["overrides"], ("K1", "H", "Pi", "Gamma", "G1", "G2"), "synthesis.overrides")
        ov = GainOverrides(
            K1=_indexed(od.get("K1", {}), "synthesis.overrides.K1"),
            H=_indexed(od.get("H", {}), "synthesis.overrides.H"),
            Pi=_indexed(od.get("Pi", {}), "synthesis.overrides.Pi"),
            Gamma=_indexed(od.get("Gamma", {}), "synthesis.overrides.Gamma"),
            G1=_matrix(od["G1"], "synthesis.overrides.G1") if "G1" in od else None,
            G2=_matrix(od["G2"], "synthesis.overrides.G2") if "G2" in od else None,
        )
    ref = {}
    if "reference" in d:
        rd = _keys(d["reference"], ("Pi", "Gamma"), "synthesis.reference")
        ref = {k: _indexed(v, f"synthesis.reference.{k}") for k, v in rd.items()}
    return SynthesisConfig(_number(d["alpha"], "synthesis.alpha"), _number(d["k1"], "synthesis.k1"),
                           _number(d["k2"], "synthesis.k2"), ov, ref)

def load_scenario(path: str) -> ScenarioFile:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    except OSError as e:
        raise ScenarioError(f"{path}: {e.strerror}") from None
    return parse_scenario(doc, name=os.path.splitext(os.path.basename(path))[0])

def load_preset(name: str) -> ScenarioFile:
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise ScenarioError(f"unknown preset {name!r}; available: {sorted(PRESETS) + sorted(PRESET_ALIASES)}")
    fname, no_additive = PRESETS[name]
    sf = load_scenario(os.path.join(PRESET_DIR, fname))
    sf.name = name
    if no_additive:
        sf.noise = sf.noise.without_additive()
    return sf


# --------------------------------- Writing ------------------------------------

def _edge_key(e: Tuple[int, int]) -> str:
    return f"{e[0]}-{e[1]}"

def _rows(m: np.ndarray) -> List[List[float]]:
    return np.asarray(m, dtype=float).tolist()

def _by_index(d: Dict[int, np.ndarray]) -> Dict[str, Any]:
    return {str(i): _rows(m) for i, m in sorted(d.items())}

def scenario_to_dict(sf: ScenarioFile) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "leader": {"A0": _rows(sf.leader.A0), "C0": _rows(sf.leader.C0)},
        "followers": [{"A": _rows(f.A), "B": _rows(f.B), "C": _rows(f.C)} for f in sf.followers],
        "topology": {"adjacency": sf.topology.follower_adjacency.tolist(),
                     "leader_links": sf.topology.leader_links.tolist()},
        "noise": {"additive": {_edge_key(e): v.tolist() for e, v in sorted(sf.noise.additive.items())},
                  "multiplicative": {_edge_key(e): s for e, s in sorted(sf.noise.multiplicative.items())}},
    }
    if sf.initial is not None:
        init = sf.initial
        doc["initial"] = {"x0": init.x0.tolist(),
                          "followers": [{"x": a.tolist(), "xhat": b.tolist(), "xhat0": c.tolist()}
                                        for a, b, c in zip(init.x, init.xhat, init.xhat0)]}
    if sf.synthesis is not None:
        sc = sf.synthesis
        ov = sc.overrides
        od: Dict[str, Any] = {k: _by_index(getattr(ov, k)) for k in ("K1", "H", "Pi", "Gamma") if getattr(ov, k)}
        for k in ("G1", "G2"):
            if getattr(ov, k) is not None:
                od[k] = _rows(getattr(ov, k))
        doc["synthesis"] = {"alpha": sc.alpha, "k1": sc.k1, "k2": sc.k2}
        if od:
            doc["synthesis"]["overrides"] = od
        if sc.reference:
            doc["synthesis"]["reference"] = {k: _by_index(v) for k, v in sc.reference.items()}
    doc["sim"] = {k: getattr(sf.sim, k) for k in SIM_DEFAULTS}
    return doc

def dump_scenario(sf: ScenarioFile, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(scenario_to_dict(sf), f, indent=2)
        f.write("\n")


# ------------------------------ Gain sets -------------------------------------

def gains_to_dict(g: GainSet) -> Dict[str, Any]:
    w = g.window
    return {
        "alpha": g.alpha, "k1": g.k1, "k2": g.k2,
        "K1": [_rows(m) for m in g.K1], "K2": [_rows(m) for m in g.K2], "H": [_rows(m) for m in g.H],
        "G1": _rows(g.G1), "G2": _rows(g.G2),
        "P": _rows(g.gare.P) if g.gare else None,
        "gare_residual": g.gare.residual if g.gare else None,
        "window": None if w is None else {"lower": w.lower if w.nonempty else None,
                                          "upper": w.upper if w.nonempty and np.isfinite(w.upper) else None,
                                          "nonempty": w.nonempty},
        "regulators": [{"Pi": _rows(r.Pi), "Gamma": _rows(r.Gamma), "residual": r.residual}
                       for r in g.regulators],
        "warnings": list(g.warnings),
    }

def gains_from_dict(d: Dict[str, Any]) -> GainSet:
    _keys(d, ("alpha", "k1", "k2", "K1", "K2", "H", "G1", "G2", "P", "gare_residual", "window",
              "regulators", "warnings"), "gains", required=("K1", "K2", "H", "G1", "G2", "regulators"))
    gare = None
    if d.get("P") is not None:
        gare = GareSolution(_matrix(d["P"], "gains.P"), float(d.get("alpha", 0.0)), float(d.get("gare_residual") or 0.0))
    window = None
    if d.get("window") is not None:
        wd = d["window"]
        nonempty = bool(wd["nonempty"])
        window = GainWindow(float(wd["lower"]) if nonempty else float("nan"),
                            (float("inf") if wd["upper"] is None else float(wd["upper"])) if nonempty else float("nan"),
                            nonempty)
    regs = [RegulatorSolution(_matrix(r["Pi"], "gains.regulators.Pi"), _matrix(r["Gamma"], "gains.regulators.Gamma"),
                              float(r["residual"])) for r in d["regulators"]]
    return GainSet(
        K1=[_matrix(m, "gains.K1") for m in d["K1"]], K2=[_matrix(m, "gains.K2") for m in d["K2"]],
        H=[_matrix(m, "gains.H") for m in d["H"]], G1=_matrix(d["G1"], "gains.G1"), G2=_matrix(d["G2"], "gains.G2"),
        k1=float(d.get("k1", 0.0)), k2=float(d.get("k2", 0.0)), alpha=float(d.get("alpha", 0.0)),
        regulators=regs, gare=gare, window=window, warnings=list(d.get("warnings", [])),
    )

def dump_gains(g: GainSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(gains_to_dict(g), f, indent=2)
        f.write("\n")

def load_gains(path: str) -> GainSet:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return gains_from_dict(json.load(f))
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None
    except OSError as e:
        raise ScenarioError(f"{path}: {e.strerror}") from None
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"{path}: malformed gains file ({e})") from None


# ----------------------------- Pipelines --------------------------------------

def regulator_solutions(sf: ScenarioFile, use_overrides: bool = True) -> List[RegulatorSolution]:
    ov = sf.synthesis.overrides if (sf.synthesis and use_overrides) else GainOverrides()
    out = []
    for i, f in enumerate(sf.followers, start=1):
        if i in ov.Pi and i in ov.Gamma:
            out.append(check_regulator(f, sf.leader, ov.Pi[i], ov.Gamma[i]))
        else:
            out.append(solve_regulator(f, sf.leader))
    return out

def synthesize_gains(sf: ScenarioFile, use_overrides: bool = True) -> GainSet:
    if sf.synthesis is None:
        raise ScenarioError("synthesis: section missing (alpha, k1, k2 required)")
    sc = sf.synthesis
    regs = regulator_solutions(sf, use_overrides)
    ov = sc.overrides if use_overrides else GainOverrides()
    return assemble_gains(sf.leader, sf.followers, sf.topology, sf.noise, regs,
                          sc.alpha, sc.k1, sc.k2, overrides=ov)

def build_scenario(sf: ScenarioFile, gains: GainSet) -> Scenario:
    if sf.initial is None:
        raise ScenarioError("initial: section missing (needed for simulation)")
    return Scenario(sf.leader, tuple(sf.followers), sf.topology, sf.noise, gains, sf.initial)

def with_sim(sf: ScenarioFile, **changes) -> ScenarioFile:
    """Copy with sim fields replaced (None values ignored)."""
    sim = replace(sf.sim, **{k: v for k, v in changes.items() if v is not None})
    return replace(sf, sim=sim)
