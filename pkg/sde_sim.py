#!/usr/bin/env python3
"""
Fixed-step Euler-Maruyama simulation of the closed loop

  leader            dx0     = A0 x0 dt
  follower i        dx_i    = (A_i x_i + B_i u_i) dt,   u_i = K1_i xhat_i + K2_i xhat_i0
  self-observer     dxhat_i = (A_i xhat_i + B_i u_i + H_i (y_i - C_i xhat_i)) dt
  leader observer   dxhat_i0 = A0 xhat_i0 dt
        + G1 sum_j a_ij [C0 (xhat_j0 - xhat_i0) dt + U_ij dw1_ij + s_ij C0 (xhat_j0 - xhat_i0) dw2_ij]
        + G2 a_i0       [(y0 - C0 xhat_i0) dt   + U_i0 dw1_i0 + s_i0 (y0 - C0 xhat_i0) dw2_i0]

Trials are advanced together as numpy batches (rows = trials). Every ordered
edge owns two independent Brownian motions (kind 1 additive, kind 2
multiplicative). Streams: trial k lives in RNG block k // TRIAL_BLOCK, column
k % TRIAL_BLOCK, and label (kind, i, j) of block b draws from
SeedSequence(seed, spawn_key=(b, kind, i, j)).
"""

import os
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from graph import LEADER, Topology, edges, neighbors
from numerics import as_vector
from plant import FollowerModel, LeaderModel, NoiseModel, check_noise_edges
from synthesis import GainSet


log = logging.getLogger(__name__)

# ------------------------------- Config ---------------------------------------

DIVERGENCE_LIMIT = float(os.getenv("MAS_DIVERGENCE_LIMIT", "1e12"))
TRIAL_BLOCK = int(os.getenv("MAS_TRIAL_BLOCK", "256"))
BATCH_TRIALS = int(os.getenv("MAS_BATCH_TRIALS", "16384"))
STEP_CHUNK = int(os.getenv("MAS_STEP_CHUNK", "256"))
THREADS = int(os.getenv("MAS_THREADS", "1"))


# --------------------------------- Errors -------------------------------------

class SimulationError(ValueError):
    pass

class DivergenceError(SimulationError):
    def __init__(self, step: int, t: float):
        super().__init__(f"state diverged at step {step} (t={t:g})")
        self.step = step
        self.t = t


# ---------------------------------- Types -------------------------------------

@dataclass(frozen=True, eq=False)
class InitialState:
    x0: np.ndarray
    x: Tuple[np.ndarray, ...]
    xhat: Tuple[np.ndarray, ...]
    xhat0: Tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "x0", as_vector(self.x0, "x0"))
        for name in ("x", "xhat", "xhat0"):
            vals = tuple(as_vector(v, f"{name}[{i}]") for i, v in enumerate(getattr(self, name), start=1))
            object.__setattr__(self, name, vals)


@dataclass(frozen=True, eq=False)
class Scenario:
    leader: LeaderModel
    followers: Tuple[FollowerModel, ...]
    topology: Topology
    noise: NoiseModel
    gains: GainSet
    initial: InitialState

    def __post_init__(self):
        object.__setattr__(self, "followers", tuple(self.followers))
        N, n, p = len(self.followers), self.leader.n, self.leader.p
        g, init = self.gains, self.initial
        if self.topology.n_followers != N:
            raise SimulationError(f"topology has {self.topology.n_followers} followers, models have {N}")
        check_noise_edges(self.noise, self.topology, p)
        for name, seq in (("K1", g.K1), ("K2", g.K2), ("H", g.H),
                          ("x", init.x), ("xhat", init.xhat), ("xhat0", init.xhat0)):
            if len(seq) != N:
                raise SimulationError(f"{name}: {len(seq)} entries for {N} followers")
        for name, G in (("G1", g.G1), ("G2", g.G2)):
            if G.shape != (n, p):
                raise SimulationError(f"{name} shape {G.shape}, expected {(n, p)}")
        if init.x0.shape != (n,):
            raise SimulationError(f"x0 has length {init.x0.shape[0]}, expected {n}")
        for i, f in enumerate(self.followers):
            shapes = {"K1": (g.K1[i].shape, (f.m, f.n)), "K2": (g.K2[i].shape, (f.m, n)),
                      "H": (g.H[i].shape, (f.n, p)), "x": (init.x[i].shape, (f.n,)),
                      "xhat": (init.xhat[i].shape, (f.n,)), "xhat0": (init.xhat0[i].shape, (n,))}
            for name, (got, want) in shapes.items():
                if got != want:
                    raise SimulationError(f"follower {i + 1}: {name} shape {got}, expected {want}")

    @cached_property
    def loop(self) -> "_Loop":
        """Closed loop compiled once per scenario."""
        return compile_loop(self)


class NoiseLabel(NamedTuple):
    kind: int   # 1 additive, 2 multiplicative
    i: int
    j: int      # 0 = leader


def noise_labels(t: Topology) -> List[NoiseLabel]:
    return [NoiseLabel(kind, i, j) for (i, j) in edges(t) for kind in (1, 2)]


@dataclass
class ClosedLoopState:
    """Batch state; row r of every array belongs to trial r."""
    x0: np.ndarray
    x: List[np.ndarray]
    xhat: List[np.ndarray]
    xhat0: List[np.ndarray]

    @property
    def batch(self) -> int:
        return self.x0.shape[0]

    def sq_norm(self) -> np.ndarray:
        sq = np.einsum("ij,ij->i", self.x0, self.x0)
        for arr in (*self.x, *self.xhat, *self.xhat0):
            sq = sq + np.einsum("ij,ij->i", arr, arr)
        return sq

    def zero_rows(self, rows: np.ndarray) -> None:
        for arr in (self.x0, *self.x, *self.xhat, *self.xhat0):
            arr[rows] = 0.0

    def flat(self) -> np.ndarray:
        return np.hstack([self.x0, *self.x, *self.xhat, *self.xhat0])


def initial_batch(init: InitialState, count: int) -> ClosedLoopState:
    def rep(v: np.ndarray) -> np.ndarray:
        return np.tile(v, (count, 1))
    return ClosedLoopState(rep(init.x0), [rep(v) for v in init.x],
                           [rep(v) for v in init.xhat], [rep(v) for v in init.xhat0])


# ------------------------------ RNG streams -----------------------------------

class RngPlan:
    def __init__(self, seed: int, labels: Sequence[NoiseLabel], block_size: int = TRIAL_BLOCK):
        if block_size < 1:
            raise SimulationError("block_size must be positive")
        self.seed = int(seed)
        self.labels = list(labels)
        self.block_size = block_size

    def generator(self, block: int, label: NoiseLabel) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(block, label.kind, label.i, label.j))
        return np.random.default_rng(ss)

    def stream(self, first_block: int, n_blocks: int, dt: float) -> "IncrementStream":
        return IncrementStream(self, range(first_block, first_block + n_blocks), dt)


class IncrementStream:
    """
    Brownian increments for consecutive RNG blocks, shape (steps, labels, trials).
    Successive draw() calls continue each generator, so results do not depend
    on the chunk sizes requested.
    """
    def __init__(self, plan: RngPlan, blocks: range, dt: float):
        self.block_size = plan.block_size
        self.n_labels = len(plan.labels)
        self.gens = [[plan.generator(b, lab) for lab in plan.labels] for b in blocks]
        self.scale = math.sqrt(dt)

    def draw(self, steps: int) -> np.ndarray:
        bs = self.block_size
        out = np.empty((steps, self.n_labels, bs * len(self.gens)))
        for b, gens in enumerate(self.gens):
            for l, g in enumerate(gens):
                out[:, l, b * bs:(b + 1) * bs] = g.standard_normal((steps, bs))
        out *= self.scale
        return out


# ---------------------------- Compiled closed loop ----------------------------

@dataclass
class _Link:
    j: Optional[int]        # 0-based neighbor follower, None for the leader
    l1: int
    l2: int
    upsilon: np.ndarray     # (p,)
    sigma: float


@dataclass
class _Agent:
    AT: np.ndarray
    BT: np.ndarray
    CT: np.ndarray
    K1T: np.ndarray
    K2T: np.ndarray
    HT: np.ndarray
    links: List[_Link] = field(default_factory=list)
    leader: Optional[_Link] = None


@dataclass
class _Loop:
    A0T: np.ndarray
    C0T: np.ndarray
    G1T: np.ndarray
    G2T: np.ndarray
    agents: List[_Agent]
    labels: List[NoiseLabel]


def compile_loop(s: Scenario) -> _Loop:
    labels = noise_labels(s.topology)
    index = {lab: k for k, lab in enumerate(labels)}
    p = s.leader.p
    agents = []
    for i, f in enumerate(s.followers, start=1):
        g = s.gains
        a = _Agent(f.A.T.copy(), f.B.T.copy(), f.C.T.copy(),
                   g.K1[i - 1].T.copy(), g.K2[i - 1].T.copy(), g.H[i - 1].T.copy())
        for j in neighbors(s.topology, i):
            link = _Link(None if j == LEADER else j - 1,
                         index[NoiseLabel(1, i, j)], index[NoiseLabel(2, i, j)],
                         s.noise.upsilon((i, j), p), s.noise.sigma((i, j)))
            if j == LEADER:
                a.leader = link
            else:
                a.links.append(link)
        agents.append(a)
    return _Loop(s.leader.A0.T.copy(), s.leader.C0.T.copy(),
                 s.gains.G1.T.copy(), s.gains.G2.T.copy(), agents, labels)


def _drive(rel: np.ndarray, link: _Link, dt: float, dw: np.ndarray) -> np.ndarray:
    out = rel * dt
    if link.sigma:
        out += link.sigma * rel * dw[link.l2][:, None]
    if link.upsilon.any():
        out += dw[link.l1][:, None] * link.upsilon
    return out

def _advance(loop: _Loop, s: ClosedLoopState, dt: float, dw: np.ndarray) -> ClosedLoopState:
    """One Euler-Maruyama step; dw has shape (labels, batch)."""
    y0 = s.x0 @ loop.C0T
    c0xh = [v @ loop.C0T for v in s.xhat0]
    xs, xhs, xh0s = [], [], []
    for k, a in enumerate(loop.agents):
        x, xh, xh0 = s.x[k], s.xhat[k], s.xhat0[k]
        bu = (xh @ a.K1T + xh0 @ a.K2T) @ a.BT
        xs.append(x + dt * (x @ a.AT + bu))
        xhs.append(xh + dt * (xh @ a.AT + bu + ((x - xh) @ a.CT) @ a.HT))
        inc = dt * (xh0 @ loop.A0T)
        if a.links:
            d1 = sum(_drive(c0xh[l.j] - c0xh[k], l, dt, dw) for l in a.links)
            inc += d1 @ loop.G1T
        if a.leader is not None:
            inc += _drive(y0 - c0xh[k], a.leader, dt, dw) @ loop.G2T
        xh0s.append(xh0 + inc)
    x0 = s.x0 + dt * (s.x0 @ loop.A0T)
    return ClosedLoopState(x0, xs, xhs, xh0s)


def step(scenario: Scenario, state: ClosedLoopState, dt: float, increments: np.ndarray) -> ClosedLoopState:
    """
    Advance `state` by dt. `increments` are the Brownian increments, ordered as
    noise_labels(scenario.topology), shape (labels,) or (labels, batch).
    """
    if dt <= 0:
        raise SimulationError(f"dt must be positive, got {dt:g}")
    loop = scenario.loop
    dw = np.asarray(increments, dtype=float)
    if dw.ndim == 1:
        dw = np.repeat(dw[:, None], state.batch, axis=1)
    if dw.shape != (len(loop.labels), state.batch):
        raise SimulationError(f"increments shape {dw.shape}, expected {(len(loop.labels), state.batch)}")
    return _advance(loop, state, dt, dw)


# ------------------------------ Batch engine ----------------------------------

Observer = Callable[[ClosedLoopState], np.ndarray]

def _grid(dt: float, horizon: float, stride: int) -> Tuple[int, np.ndarray]:
    if dt <= 0 or dt > horizon:
        raise SimulationError(f"need 0 < dt <= horizon (dt={dt:g}, horizon={horizon:g})")
    if stride < 1:
        raise SimulationError("stride must be >= 1")
    n_steps = int(round(horizon / dt))
    rec = np.unique(np.r_[np.arange(0, n_steps + 1, stride), n_steps])
    return n_steps, rec

def _run_batch(loop: _Loop, init: InitialState, plan: RngPlan, first: int, count: int,
               dt: float, n_steps: int, rec: np.ndarray, observe: Observer):
    """Returns (values (len(rec), count, k), alive mask, first divergence step or -1)."""
    bs = plan.block_size
    stream = plan.stream(first // bs, -(-count // bs), dt)
    off = first % bs
    state = initial_batch(init, count)
    alive = np.ones(count, dtype=bool)
    first_bad = -1
    first_obs = observe(state)
    values = np.empty((len(rec), count, first_obs.shape[1]))
    values[0] = first_obs
    r = 1
    limit_sq = DIVERGENCE_LIMIT ** 2
    n = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while n < n_steps:
            chunk = stream.draw(min(STEP_CHUNK, n_steps - n))[:, :, off:off + count]
            for dw in chunk:
                state = _advance(loop, state, dt, dw)
                n += 1
                bad = ~(state.sq_norm() <= limit_sq) & alive
                if bad.any():
                    if first_bad < 0:
                        first_bad = n
                    alive &= ~bad
                    state.zero_rows(bad)
                if r < len(rec) and rec[r] == n:
                    values[r] = observe(state)
                    r += 1
    return values, alive, first_bad


# -------------------------------- Channels ------------------------------------

def _tracking(loop_s: Scenario) -> Observer:
    C0T = loop_s.leader.C0.T
    CT = [f.C.T for f in loop_s.followers]

    def obs(s: ClosedLoopState) -> np.ndarray:
        y0 = s.x0 @ C0T
        return np.stack([np.sum((x @ c - y0) ** 2, axis=1) for x, c in zip(s.x, CT)], axis=1)
    return obs

def _delta_sq(_s: Scenario) -> Observer:
    return lambda s: np.stack([np.sum((v - s.x0) ** 2, axis=1) for v in s.xhat0], axis=1)

def _delta(_s: Scenario) -> Observer:
    return lambda s: np.stack([v[:, 0] - s.x0[:, 0] for v in s.xhat0], axis=1)

CHANNELS: Dict[str, Callable[[Scenario], Observer]] = {
    "tracking": _tracking,      # ||y_i - y_0||^2
    "delta_sq": _delta_sq,      # ||xhat_i0 - x0||^2
    "delta": _delta,            # first coordinate of xhat_i0 - x0
}


@dataclass
class TrialSums:
    times: np.ndarray
    total: np.ndarray       # (grid, N) sum over surviving trials
    total_sq: np.ndarray
    n_ok: int
    n_divergent: int


def run_trials(scenario: Scenario, trials: int, seed: int, dt: float, horizon: float,
               channel: str = "tracking", stride: int = 1, threads: int = THREADS,
               on_batch: Optional[Callable[[int], None]] = None) -> TrialSums:
    if channel not in CHANNELS:
        raise SimulationError(f"unknown channel {channel!r}; expected one of {sorted(CHANNELS)}")
    n_steps, rec = _grid(dt, horizon, stride)
    loop = scenario.loop
    plan = RngPlan(seed, loop.labels)
    observe = CHANNELS[channel](scenario)
    bs = plan.block_size
    batch = max(bs, (BATCH_TRIALS // bs) * bs)
    starts = list(range(0, trials, batch))

    def one(first: int):
        count = min(batch, trials - first)
        out = _run_batch(loop, scenario.initial, plan, first, count, dt, n_steps, rec, observe)
        if on_batch:
            on_batch(count)
        return out

    N = len(scenario.followers)
    total = np.zeros((len(rec), N))
    total_sq = np.zeros((len(rec), N))
    n_ok = 0
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        # map() yields in submission order, so the reduction order is fixed
        for values, alive, _ in ex.map(one, starts):
            kept = values[:, alive, :]
            total += kept.sum(axis=1)
            total_sq += (kept * kept).sum(axis=1)
            n_ok += int(alive.sum())
    n_div = trials - n_ok
    if n_div:
        log.warning("%d of %d trials diverged (state norm > %g) and were excluded", n_div, trials, DIVERGENCE_LIMIT)
    return TrialSums(rec * dt, total, total_sq, n_ok, n_div)


# ------------------------------- Trajectory -----------------------------------

@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    times: np.ndarray
    x0: np.ndarray                  # (T, n)
    x: Tuple[np.ndarray, ...]       # (T, n_i) each
    xhat: Tuple[np.ndarray, ...]
    xhat0: Tuple[np.ndarray, ...]   # (T, n) each
    C0: np.ndarray
    C: Tuple[np.ndarray, ...]

    @property
    def n_followers(self) -> int:
        return len(self.x)

    def y0(self) -> np.ndarray:
        return self.x0 @ self.C0.T

    def y(self, i: int) -> np.ndarray:
        return self.x[i - 1] @ self.C[i - 1].T

    def tracking_error(self, i: int) -> np.ndarray:
        return self.y(i) - self.y0()

    def err_sq(self, i: int) -> np.ndarray:
        return np.sum(self.tracking_error(i) ** 2, axis=1)

    def estimation_error(self, i: int) -> np.ndarray:
        return self.x[i - 1] - self.xhat[i - 1]

    def delta(self, i: int) -> np.ndarray:
        return self.xhat0[i - 1] - self.x0


def simulate(scenario: Scenario, seed: int, dt: float, horizon: float, stride: int = 1) -> TrajectoryRecord:
    """Single trajectory; uses the noise of Monte Carlo trial 0 for the same seed."""
    n_steps, rec = _grid(dt, horizon, stride)
    loop = scenario.loop
    plan = RngPlan(seed, loop.labels)
    values, alive, first_bad = _run_batch(loop, scenario.initial, plan, 0, 1, dt, n_steps, rec,
                                          ClosedLoopState.flat)
    if not alive[0]:
        raise DivergenceError(first_bad, first_bad * dt)
    flat = values[:, 0, :]
    n = scenario.leader.n
    cols = [n] + [f.n for f in scenario.followers] * 2 + [n] * len(scenario.followers)
    parts = np.split(flat, np.cumsum(cols)[:-1], axis=1)
    N = len(scenario.followers)
    return TrajectoryRecord(rec * dt, parts[0], tuple(parts[1:1 + N]), tuple(parts[1 + N:1 + 2 * N]),
                            tuple(parts[1 + 2 * N:]), scenario.leader.C0,
                            tuple(f.C for f in scenario.followers))
