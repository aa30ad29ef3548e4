import dataclasses
import math

import numpy as np
import pytest
from scipy import linalg

import sde_sim
from analysis import build_scalar_star, monte_carlo_mse
from graph import build_topology
from plant import NoiseModel, ScalarParams
from scenario import build_scenario, synthesize_gains
from sde_sim import (
    DivergenceError, InitialState, NoiseLabel, Scenario, SimulationError, _grid, initial_batch, noise_labels,
    run_trials, simulate, step,
)
from synthesis import GainSet


def _params(**kw):
    base = dict(a0=0.0, c0=1.0, ai=-1.0, bi=1.0, ci=1.0, k=1.0, k1=-1.0)
    base.update(kw)
    return ScalarParams(**base)


def test_noise_labels_follow_edge_order():
    t = build_topology([[0, 0, 0], [0, 0, 1], [0, 1, 0]], [1, 1, 0])
    assert noise_labels(t) == [
        NoiseLabel(1, 1, 0), NoiseLabel(2, 1, 0),
        NoiseLabel(1, 2, 3), NoiseLabel(2, 2, 3),
        NoiseLabel(1, 2, 0), NoiseLabel(2, 2, 0),
        NoiseLabel(1, 3, 2), NoiseLabel(2, 3, 2),
    ]

def test_grid_includes_last_step():
    n, rec = _grid(0.1, 1.0, 3)
    assert n == 10
    assert rec.tolist() == [0, 3, 6, 9, 10]
    with pytest.raises(SimulationError):
        _grid(2.0, 1.0, 1)
    with pytest.raises(SimulationError):
        _grid(0.1, 1.0, 0)


def test_step_without_noise_is_explicit_euler():
    s = build_scalar_star(_params(a0=0.5), x0=1.0, delta0=1.0, estimation0=0.5)
    st = initial_batch(s.initial, 1)
    nxt = step(s, st, 0.01, np.zeros(2))
    # leader
    assert nxt.x0[0, 0] == pytest.approx(1.0 + 0.01 * 0.5)
    # leader observer: xhat0 = 2, y0 - c0 xhat0 = -1, G2 = k = 1
    assert nxt.xhat0[0][0, 0] == pytest.approx(2.0 + 0.01 * (0.5 * 2.0 - 1.0))
    # follower: x = pi x0 = 1, xhat = 0.5, u = k1 xhat + k2 xhat0
    g = s.gains
    u = g.K1[0][0, 0] * 0.5 + g.K2[0][0, 0] * 2.0
    assert nxt.x[0][0, 0] == pytest.approx(1.0 + 0.01 * (-1.0 * 1.0 + u))
    h = g.H[0][0, 0]
    assert nxt.xhat[0][0, 0] == pytest.approx(0.5 + 0.01 * (-0.5 + u + h * 0.5))

def test_step_additive_increment():
    s = build_scalar_star(_params(upsilon=2.0), x0=1.0, delta0=1.0)
    st = initial_batch(s.initial, 1)
    nxt = step(s, st, 0.01, [0.1, 0.0])
    assert nxt.xhat0[0][0, 0] == pytest.approx(2.0 - 0.01 + 2.0 * 0.1)

def test_step_multiplicative_increment():
    s = build_scalar_star(_params(sigma=0.5), x0=1.0, delta0=1.0)
    st = initial_batch(s.initial, 3)
    nxt = step(s, st, 0.01, np.array([[0.0, 0.0, 0.0], [0.2, 0.0, -0.2]]))
    assert np.allclose(nxt.xhat0[0][:, 0], [2.0 - 0.01 - 0.1, 2.0 - 0.01, 2.0 - 0.01 + 0.1])

def test_step_validates_arguments():
    s = build_scalar_star(_params())
    st = initial_batch(s.initial, 2)
    with pytest.raises(SimulationError):
        step(s, st, 0.0, np.zeros(2))
    with pytest.raises(SimulationError):
        step(s, st, 0.01, np.zeros((3, 2)))


def test_scenario_rejects_inconsistent_gains():
    s = build_scalar_star(_params())
    g = s.gains
    short = GainSet(g.K1, [], g.H, g.G1, g.G2, g.k1, g.k2, g.alpha, g.regulators)
    with pytest.raises(SimulationError):
        Scenario(s.leader, s.followers, s.topology, s.noise, short, s.initial)
    wide = GainSet(g.K1, g.K2, g.H, np.zeros((2, 1)), g.G2, g.k1, g.k2, g.alpha, g.regulators)
    with pytest.raises(SimulationError):
        Scenario(s.leader, s.followers, s.topology, s.noise, wide, s.initial)


def test_noise_free_delta_matches_euler_recursion():
    s = build_scalar_star(_params(), delta0=1.0)
    sums = run_trials(s, 2, seed=0, dt=0.01, horizon=1.0, channel="delta", stride=10)
    mean = sums.total[:, 0] / sums.n_ok
    steps = np.round(sums.times / 0.01)
    assert np.allclose(mean, 0.99 ** steps, rtol=1e-12)
    assert mean[-1] == pytest.approx(math.exp(-1.0), abs=5e-3)

def test_unknown_channel():
    with pytest.raises(SimulationError):
        run_trials(build_scalar_star(_params()), 2, 0, 0.01, 0.1, channel="bogus")


def test_runs_are_reproducible():
    s = build_scalar_star(_params(sigma=0.5, upsilon=0.3), n_followers=2)
    a = run_trials(s, 300, seed=11, dt=0.01, horizon=0.5, stride=5)
    b = run_trials(s, 300, seed=11, dt=0.01, horizon=0.5, stride=5)
    c = run_trials(s, 300, seed=12, dt=0.01, horizon=0.5, stride=5)
    assert np.array_equal(a.total, b.total)
    assert not np.array_equal(a.total, c.total)

def test_results_do_not_depend_on_chunking(monkeypatch):
    s = build_scalar_star(_params(sigma=0.5, upsilon=0.3), n_followers=2)
    ref = run_trials(s, 600, seed=5, dt=0.01, horizon=0.5, stride=5)
    monkeypatch.setattr(sde_sim, "STEP_CHUNK", 7)
    assert np.array_equal(run_trials(s, 600, seed=5, dt=0.01, horizon=0.5, stride=5).total, ref.total)
    monkeypatch.setattr(sde_sim, "BATCH_TRIALS", 256)
    small = run_trials(s, 600, seed=5, dt=0.01, horizon=0.5, stride=5, threads=3)
    assert np.allclose(small.total, ref.total, rtol=1e-12)
    assert np.allclose(small.total_sq, ref.total_sq, rtol=1e-12)

def test_single_trajectory_is_trial_zero():
    s = build_scalar_star(_params(sigma=0.5, upsilon=0.3))
    rec = simulate(s, seed=4, dt=0.01, horizon=0.5, stride=5)
    one = run_trials(s, 1, seed=4, dt=0.01, horizon=0.5, stride=5)
    assert np.allclose(rec.err_sq(1), one.total[:, 0], rtol=1e-12, atol=1e-15)
    assert np.allclose(rec.times, one.times)
    assert rec.delta(1).shape == (len(rec.times), 1)
    assert np.allclose(rec.tracking_error(1), rec.y(1) - rec.y0())


def test_divergence_is_detected():
    s = build_scalar_star(_params(a0=20.0, k=1.0))
    with pytest.raises(DivergenceError) as exc:
        simulate(s, seed=0, dt=0.01, horizon=2.0)
    assert 0 < exc.value.t <= 2.0
    sums = run_trials(s, 3, seed=0, dt=0.01, horizon=2.0, stride=50)
    assert sums.n_ok == 0 and sums.n_divergent == 3


def test_step_compiles_the_loop_once(monkeypatch):
    calls = []
    real = sde_sim.compile_loop
    monkeypatch.setattr(sde_sim, "compile_loop", lambda s: calls.append(s) or real(s))
    s = build_scalar_star(_params(sigma=0.5))
    st = initial_batch(s.initial, 2)
    for _ in range(5):
        st = step(s, st, 0.01, np.zeros(2))
    run_trials(s, 2, seed=0, dt=0.01, horizon=0.1)
    assert len(calls) == 1
    assert s.loop is s.loop


# ------------------------------ Closed-loop facts -----------------------------

def _example_scenario(example, **initial):
    s = build_scenario(example, synthesize_gains(example))
    return dataclasses.replace(s, initial=InitialState(**initial)) if initial else s

def test_estimation_error_follows_its_own_recursion(example):
    rng = np.random.default_rng(3)
    base = _example_scenario(example)
    init = base.initial
    e0 = [rng.normal(size=f.n) for f in base.followers]
    s = _example_scenario(example, x0=init.x0, x=init.x, xhat=[x - e for x, e in zip(init.x, e0)],
                          xhat0=init.xhat0)
    assert s.noise.has_additive
    dt, horizon = 1e-3, 2.0
    rec = simulate(s, seed=9, dt=dt, horizon=horizon)
    for i, f in enumerate(s.followers, start=1):
        F = f.A - s.gains.H[i - 1] @ f.C
        M = np.eye(f.n) + dt * F
        e = e0[i - 1].copy()
        expected = [e]
        for _ in range(len(rec.times) - 1):
            e = M @ e
            expected.append(e)
        got = rec.estimation_error(i)
        assert np.allclose(got, np.array(expected), rtol=1e-9, atol=1e-9)
        exact = linalg.expm(F * horizon) @ e0[i - 1]
        assert np.allclose(got[-1], exact, atol=50 * dt * (1.0 + np.abs(e0[i - 1]).max()))

def test_regulator_manifold_is_invariant_without_noise(example):
    gains = synthesize_gains(example)
    x0 = np.array([1.0, -0.5, 0.25])
    xs = [reg.Pi @ x0 for reg in gains.regulators]
    s = dataclasses.replace(build_scenario(example, gains), noise=NoiseModel({}, {}),
                            initial=InitialState(x0, xs, xs, [x0] * len(xs)))
    rec = simulate(s, seed=0, dt=1e-3, horizon=2.0, stride=10)
    scale = 1.0 + np.abs(rec.y0()).max()
    for i in range(1, rec.n_followers + 1):
        assert np.abs(rec.y(i) - rec.y0()).max() <= 1e-6 * scale
        assert np.abs(rec.delta(i)).max() <= 1e-9 * scale
        assert np.abs(rec.estimation_error(i)).max() <= 1e-9 * scale

def test_mean_error_halves_with_the_step():
    s = build_scalar_star(_params(sigma=0.2), delta0=1.0)
    errors = []
    for dt in (0.2, 0.1):
        sums = run_trials(s, 20_000, seed=13, dt=dt, horizon=2.0, channel="delta")
        errors.append(abs(sums.total[-1, 0] / sums.n_ok - math.exp(-2.0)))
    assert 1.6 <= errors[0] / errors[1] <= 2.5

def test_swapping_noise_labels_swaps_followers(monkeypatch):
    s = build_scalar_star(_params(sigma=0.4, upsilon=0.3), n_followers=2)
    ref_path = simulate(s, seed=6, dt=0.01, horizon=1.0)
    ref = monte_carlo_mse(s, 2000, 6, 0.01, 1.0, stride=10)
    real = sde_sim.RngPlan.generator

    def swapped(self, block, label):
        if label.j == 0:
            label = NoiseLabel(label.kind, 3 - label.i, 0)
        return real(self, block, label)
    monkeypatch.setattr(sde_sim.RngPlan, "generator", swapped)
    path = simulate(s, seed=6, dt=0.01, horizon=1.0)
    assert np.allclose(path.err_sq(1), ref_path.err_sq(2), rtol=1e-12)
    assert np.allclose(path.delta(2), ref_path.delta(1), rtol=1e-12)
    assert not np.allclose(path.err_sq(1), ref_path.err_sq(1))
    band = 4.0 * np.sqrt(ref.se[:, 0] ** 2 + ref.se[:, 1] ** 2)
    assert np.all(np.abs(ref.mean[:, 0] - ref.mean[:, 1]) <= band + 1e-15)
