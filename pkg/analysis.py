#!/usr/bin/env python3
"""
Monte Carlo moment estimation and the scalar closed-form oracles

- monte_carlo_mse: pointwise mean of ||y_i - y_0||^2 (or an estimator channel) with standard errors
- plateau / tail-minimum proxies for limsup / liminf, tracking-time estimate
- scalar star oracles: E[delta(t)], the E[delta^2] exponent, best observer gain
- log-linear exponent regression
"""

import os
import math
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from graph import star_topology
from plant import FollowerModel, LeaderModel, NoiseModel, ScalarParams
from sde_sim import THREADS, InitialState, Scenario, run_trials
from synthesis import GainSet, RegulatorSolution, gain_window
from utils.csv_export import read_mse_csv


log = logging.getLogger(__name__)

# ------------------------------- Config ---------------------------------------

RECORD_STRIDE = int(os.getenv("MAS_RECORD_STRIDE", "10"))
TAIL_FRACTION = 0.25


class AnalysisError(ValueError):
    pass


# ---------------------------------- Series ------------------------------------

@dataclass(frozen=True, eq=False)
class MseSeries:
    times: np.ndarray
    mean: np.ndarray        # (T, N)
    se: np.ndarray          # (T, N)
    trials: int
    divergent: int
    channel: str = "tracking"

    @property
    def n_followers(self) -> int:
        return self.mean.shape[1]


def monte_carlo_mse(scenario: Scenario, trials: int, seed: int, dt: float, horizon: float,
                    channel: str = "tracking", stride: int = RECORD_STRIDE, threads: int = THREADS,
                    on_batch: Optional[Callable[[int], None]] = None) -> MseSeries:
    if trials < 2:
        raise AnalysisError(f"need at least 2 trials, got {trials}")
    sums = run_trials(scenario, trials, seed, dt, horizon, channel=channel, stride=stride,
                      threads=threads, on_batch=on_batch)
    n = sums.n_ok
    if n == 0:
        raise AnalysisError(f"all {trials} trials diverged")
    if n < 2:
        raise AnalysisError(f"only {n} non-divergent trial(s); standard errors undefined")
    if sums.n_divergent:
        log.warning("%d of %d trials diverged and were excluded", sums.n_divergent, trials)
    mean = sums.total / n
    var = np.maximum(sums.total_sq - n * mean * mean, 0.0) / (n - 1)
    return MseSeries(sums.times, mean, np.sqrt(var / n), n, sums.n_divergent, channel)


def _tail(series: MseSeries, tail_fraction: float) -> np.ndarray:
    if not (0.0 < tail_fraction < 1.0):
        raise AnalysisError(f"tail_fraction must be in (0,1), got {tail_fraction:g}")
    t = series.times
    return t >= t[-1] - tail_fraction * (t[-1] - t[0])

def plateau_estimate(series: MseSeries, tail_fraction: float = TAIL_FRACTION) -> np.ndarray:
    return series.mean[_tail(series, tail_fraction)].max(axis=0)

def tail_minimum(series: MseSeries, tail_fraction: float = TAIL_FRACTION) -> Tuple[np.ndarray, np.ndarray]:
    """Per follower: minimum tail estimate and the standard error at that point."""
    m = series.mean[_tail(series, tail_fraction)]
    s = series.se[_tail(series, tail_fraction)]
    k = m.argmin(axis=0)
    cols = np.arange(m.shape[1])
    return m[k, cols], s[k, cols]

def tracking_time_estimate(series: MseSeries, epsilon: float) -> float:
    if epsilon <= 0:
        raise AnalysisError(f"epsilon must be positive, got {epsilon:g}")
    above = np.any(series.mean > epsilon, axis=1)
    if not above.any():
        return float(series.times[0])
    last = int(np.flatnonzero(above)[-1])
    if last == len(series.times) - 1:
        return math.inf
    return float(series.times[last + 1])


# ------------------------------ Scalar oracles --------------------------------

def scalar_mean_closed_form(p: ScalarParams, t, delta0: float):
    """
    E[delta(t)] = e^{(a0 - G c0) t} E[delta(0)], G the leader-observer gain (k by default).
    Both noise terms are Ito integrals, so neither shifts the mean.
    """
    lam = p.a0 - p.G_value * p.c0
    return np.exp(lam * np.asarray(t, dtype=float)) * float(delta0)

def scalar_msq_exponent(p: ScalarParams) -> float:
    G = p.G_value
    return 2.0 * p.a0 - 2.0 * G * p.c0 + G ** 2 * p.sigma ** 2 * p.c0 ** 2

def best_observer_gain(p: ScalarParams) -> float:
    if p.sigma == 0:
        raise AnalysisError("no finite minimizer without multiplicative noise")
    return 1.0 / (p.sigma ** 2 * p.c0)

def min_msq_exponent(a0: float, sigma: float) -> float:
    return 2.0 * a0 - 1.0 / sigma ** 2

def scalar_tracking_mean_limit(p: ScalarParams) -> float:
    """lim E[y_i - y_0] for the scalar star system; zero whenever all three loops are stable."""
    loops = {"a0 - G c0": p.a0 - p.G_value * p.c0, "ai + bi k1": p.ai + p.bi * p.k1,
             "ai - h ci": p.ai - p.h_value * p.ci}
    unstable = [name for name, v in loops.items() if v >= 0]
    if unstable:
        raise AnalysisError(f"mean error has no limit; nonnegative loop rate(s): {', '.join(unstable)}")
    return 0.0


def series_from_csv(path: str, trials: int, divergent: int = 0, channel: str = "tracking") -> MseSeries:
    """MseSeries from an mse.csv; trial counts are not stored in the file and must be supplied."""
    times, mean, se = read_mse_csv(path)
    return MseSeries(times, mean, se, trials, divergent, channel)


def exponent_regression(times: Sequence[float], values: Sequence[float],
                        window: Optional[Tuple[float, float]] = None) -> float:
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if window is not None:
        keep = (t >= window[0]) & (t <= window[1])
        t, v = t[keep], v[keep]
    if len(t) < 2:
        raise AnalysisError("need at least 2 points in the regression window")
    if np.any(v <= 0):
        raise AnalysisError("series must be strictly positive on the regression window")
    slope, _ = np.polyfit(t, np.log(v), 1)
    return float(slope)


def build_scalar_star(p: ScalarParams, n_followers: int = 1, x0: float = 1.0, delta0: float = 1.0,
                      estimation0: float = 0.0) -> Scenario:
    """
    Scalar star system: G1 = 0, G2 = G, every follower on its regulator manifold
    x_i = pi x0 with xhat_i0 = x0 + delta0 and x_i - xhat_i = estimation0.
    """
    if p.bi == 0 or p.ci == 0 or p.c0 == 0:
        raise AnalysisError("scalar star needs bi, ci, c0 nonzero")
    topo = star_topology(n_followers)
    leader = LeaderModel([[p.a0]], [[p.c0]])
    follower = FollowerModel([[p.ai]], [[p.bi]], [[p.ci]])
    noise = NoiseModel({(i, 0): [p.upsilon] for i in range(1, n_followers + 1)} if p.upsilon else {},
                       {(i, 0): p.sigma for i in range(1, n_followers + 1)} if p.sigma else {})
    reg = RegulatorSolution(np.array([[p.pi]]), np.array([[p.gamma]]), 0.0)
    N = n_followers
    gains = GainSet(
        K1=[np.array([[p.k1]])] * N, K2=[np.array([[p.k2_value]])] * N, H=[np.array([[p.h_value]])] * N,
        G1=np.zeros((1, 1)), G2=np.array([[p.G_value]]), k1=0.0, k2=p.G_value, alpha=max(p.a0, 0.0),
        regulators=[reg] * N, window=gain_window(1.0, p.sigma ** 2, max(p.a0, 0.0)),
    )
    xi = p.pi * x0
    init = InitialState([x0], [[xi]] * N, [[xi - estimation0]] * N, [[x0 + delta0]] * N)
    return Scenario(leader, [follower] * N, topo, noise, gains, init)
