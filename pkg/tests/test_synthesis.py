import math

import numpy as np
import pytest

from graph import build_topology, star_topology
from numerics import spectrum
from plant import FollowerModel, LeaderModel, NoiseModel, ScalarParams, regulator_rank_failures
from scenario import regulator_solutions, synthesize_gains
from synthesis import (
    GainOverrides, GainSet, GareError, HurwitzError, InitialMoments, RegulatorError, RegulatorSolution,
    SynthesisError, alpha_interval, assemble_gains, certify_hurwitz, check_regulator, cooperatability,
    design_observer_gain, design_stabilizer, gain_factor, gain_window, gare_residual, initial_moments,
    lambda0_u, scalar_lower_bound, solve_gare, solve_regulator, tracking_bound, tracking_bound_value,
    regulator_residual, tracking_time_bound, varpi1,
)


SQRT2 = math.sqrt(2.0)


# ------------------------------- regulator ------------------------------------

def test_scalar_regulator():
    leader = LeaderModel([[1.0]], [[1.0]])
    f = FollowerModel([[-1.0]], [[1.0]], [[2.0]])
    sol = solve_regulator(f, leader)
    assert sol.Pi[0, 0] == pytest.approx(0.5)
    assert sol.Gamma[0, 0] == pytest.approx(1.0)
    assert sol.residual < 1e-12

def test_example_regulators_satisfy_equations(example):
    for f, sol in zip(example.followers, regulator_solutions(example, use_overrides=False)):
        assert sol.Pi.shape == (4, 3)
        assert sol.Gamma.shape == (f.m, 3)
        assert np.allclose(f.C @ sol.Pi, example.leader.C0, atol=1e-9)
        assert np.allclose(sol.Pi @ example.leader.A0, f.A @ sol.Pi + f.B @ sol.Gamma, atol=1e-8)

def test_computed_regulators_meet_printed_precision(example):
    for sol in regulator_solutions(example, use_overrides=False):
        assert sol.residual <= 5e-3

def test_printed_follower1_regulator_deviates_in_one_entry(example):
    # the preset reference Pi_1, Gamma_1 meet every equation to print precision
    # except entry (3, 3) of Pi A0 - A Pi - B Gamma
    ref = example.synthesis.reference
    f, leader = example.followers[0], example.leader
    Pi, Gamma = np.asarray(ref["Pi"][1]), np.asarray(ref["Gamma"][1])
    R = Pi @ leader.A0 - f.A @ Pi - f.B @ Gamma
    assert abs(R[2, 2]) == pytest.approx(1.6629, abs=1e-3)
    rest = np.delete(R.ravel(), 8)
    assert np.abs(rest).max() <= 5e-3
    assert np.allclose(f.C @ Pi, leader.C0, atol=5e-3)
    with pytest.raises(RegulatorError):
        check_regulator(f, leader, Pi, Gamma)

def test_printed_regulators_of_followers_2_and_3_are_rejected(example):
    ref = example.synthesis.reference
    for i in (2, 3):
        f = example.followers[i - 1]
        assert regulator_residual(f, example.leader, ref["Pi"][i], ref["Gamma"][i]) > 1.0
        with pytest.raises(RegulatorError):
            check_regulator(f, example.leader, ref["Pi"][i], ref["Gamma"][i])

@pytest.mark.parametrize("seed", range(30))
def test_regulator_solvable_iff_no_rank_failure(seed):
    rng = np.random.default_rng(seed)
    leader = LeaderModel(rng.normal(size=(2, 2)), rng.normal(size=(1, 2)))
    C = rng.normal(size=(1, 3)) if seed % 3 else np.zeros((1, 3))
    f = FollowerModel(rng.normal(size=(3, 3)), rng.normal(size=(3, 1)), C)
    if seed % 3 == 0:
        assert regulator_rank_failures(f, leader)
    if regulator_rank_failures(f, leader):
        with pytest.raises(RegulatorError):
            solve_regulator(f, leader)
    else:
        sol = solve_regulator(f, leader)
        assert sol.residual < 1e-8 * (1.0 + np.abs(sol.Pi).max() + np.abs(sol.Gamma).max())

def test_check_regulator_rejects_wrong_solution(example):
    f = example.followers[0]
    with pytest.raises(RegulatorError):
        check_regulator(f, example.leader, np.zeros((4, 3)), np.zeros((2, 3)))
    with pytest.raises(RegulatorError):
        check_regulator(f, example.leader, np.zeros((3, 3)), np.zeros((2, 3)))

def test_regulator_unsolvable_at_transmission_zero():
    leader = LeaderModel([[0.0]], [[1.0]])
    with pytest.raises(RegulatorError) as exc:
        solve_regulator(FollowerModel([[0.0]], [[1.0]], [[0.0]]), leader)
    assert exc.value.eigenvalue == pytest.approx(0.0)


# ---------------------------------- GARE --------------------------------------

def test_lambda0_u(example):
    assert lambda0_u(np.diag([-1.0, 0.5, 2.0])) == pytest.approx(2.5)
    assert lambda0_u(-np.eye(2)) == 0.0
    assert lambda0_u(example.leader.A0) == pytest.approx(0.0486, abs=5e-4)

@pytest.mark.parametrize("a0, alpha, expected", [
    (1.0, 3.0, 1.0),
    (0.5, 1.0, 1.0 + SQRT2),
    (0.0, 1.0, 1.0),
])
def test_scalar_gare(a0, alpha, expected):
    sol = solve_gare(LeaderModel([[a0]], [[1.0]]), alpha)
    assert sol.P[0, 0] == pytest.approx(expected, rel=1e-8)
    assert sol.residual < 1e-8

@pytest.mark.parametrize("scale", [0.1, 1.0, 10.0])
def test_gare_start_does_not_matter(example, scale):
    ref = solve_gare(example.leader, example.synthesis.alpha)
    sol = solve_gare(example.leader, example.synthesis.alpha, P0=scale * np.eye(3))
    assert np.allclose(sol.P, ref.P, atol=1e-6)

def test_gare_lyapunov_branch():
    sol = solve_gare(LeaderModel([[-1.0]], [[1.0]]), 0.0)
    assert sol.P[0, 0] == pytest.approx(0.5)

def test_gare_rejects_small_alpha():
    leader = LeaderModel([[1.0]], [[1.0]])
    with pytest.raises(GareError):
        solve_gare(leader, 0.5)
    with pytest.raises(GareError):
        solve_gare(leader, -1.0)
    with pytest.raises(GareError):
        solve_gare(LeaderModel([[1.0]], [[1.0]]), 0.0)

def test_gare_rejects_unobservable_leader():
    with pytest.raises(GareError):
        solve_gare(LeaderModel(np.diag([0.1, 0.2]), [[1.0, 0.0]]), 1.0)

def test_example_gare(example):
    sol = solve_gare(example.leader, example.synthesis.alpha)
    assert sol.residual < 1e-8
    assert np.linalg.eigvalsh(sol.P)[0] > 0
    assert np.allclose(gare_residual(example.leader, sol.alpha, sol.P), 0.0, atol=1e-8)
    K = gain_factor(example.leader, sol.P)
    assert K.shape == (3, 1)


# ---------------------------- windows / verdicts ------------------------------

def test_gain_window_values():
    w = gain_window(1.0, 0.25, 0.5)
    assert w.nonempty
    assert w.lower == pytest.approx(2 - SQRT2, abs=1e-5)
    assert w.upper == pytest.approx(2 + SQRT2, abs=1e-5)
    assert w.contains(1.0) and not w.contains(4.0)

def test_gain_window_edge_cases():
    w = gain_window(2.0, 0.0, 1.0)
    assert (w.lower, w.upper, w.nonempty) == (0.5, math.inf, True)
    assert not gain_window(1.0, 1.0, 1.0).nonempty
    assert not gain_window(0.0, 0.1, 1.0).nonempty
    assert not gain_window(1.0, 1.0, 1.0).contains(0.5)

def test_gain_window_shrinks_as_noise_grows():
    grid = [1e-6, 0.5, 1.0, 1.5, 2.0, 2.4]
    windows = [gain_window(1.0, s2, 0.1) for s2 in grid]
    assert all(w.nonempty for w in windows)
    lows, highs = [w.lower for w in windows], [w.upper for w in windows]
    assert all(a < b for a, b in zip(lows, lows[1:]))
    assert all(a > b for a, b in zip(highs, highs[1:]))
    assert lows[0] == pytest.approx(0.1, rel=1e-5)
    assert gain_window(1.0, 0.0, 0.1).lower == pytest.approx(0.1)
    assert not gain_window(1.0, 2.6, 0.1).nonempty

def test_example_window_is_empty(example):
    lam1 = (3 - math.sqrt(5)) / 2
    assert not gain_window(lam1, example.noise.sigma_sq_max, example.synthesis.alpha).nonempty

def test_alpha_interval():
    lo, hi = alpha_interval(0.5, 1.0, 0.25)
    assert lo == 0.5
    assert hi == pytest.approx(0.5 + (1.0 - 0.5) / 1.0)
    assert alpha_interval(0.2, 1.0, 0.0) == (0.2, math.inf)

def test_cooperatability(example):
    lam1 = (3 - math.sqrt(5)) / 2
    assert cooperatability(example.noise.sigma_sq_max, lambda0_u(example.leader.A0), lam1)
    assert not cooperatability(1.0, 1.0, 1.0)
    assert cooperatability(0.36, 1.0, 1.0, scalar=True)
    assert not cooperatability(0.64, 1.0, 1.0, scalar=True)


# ------------------------ stabilizer / observer -------------------------------

@pytest.mark.parametrize("a, k", [(1.0, -(1.0 + SQRT2)), (-1.0, -(SQRT2 - 1.0))])
def test_lqr_scalar(a, k):
    assert design_stabilizer([[a]], [[1.0]])[0, 0] == pytest.approx(k)

def test_observer_scalar():
    H = design_observer_gain([[1.0]], [[1.0]])
    assert H[0, 0] == pytest.approx(1.0 + SQRT2)

def test_example_designs_are_hurwitz(example):
    for f in example.followers:
        K = design_stabilizer(f.A, f.B)
        H = design_observer_gain(f.A, f.C)
        assert spectrum(f.A + f.B @ K).max_real < 0
        assert spectrum(f.A - H @ f.C).max_real < 0

def test_design_rejects_unstabilizable():
    with pytest.raises(SynthesisError):
        design_stabilizer(np.diag([1.0, -1.0]), [[0.0], [1.0]])
    with pytest.raises(SynthesisError):
        design_observer_gain(np.diag([1.0, -1.0]), [[0.0, 1.0]])

def test_certify_hurwitz():
    certify_hurwitz([[-1.0]], "M")
    with pytest.raises(HurwitzError) as exc:
        certify_hurwitz([[0.0]], "M")
    assert exc.value.eigenvalue == pytest.approx(0.0)
    with pytest.raises(HurwitzError):
        certify_hurwitz([[-1e-9]], "M", margin=1e-6)


# -------------------------------- assembly ------------------------------------

def test_example_gains_follow_overrides(example):
    g = synthesize_gains(example)
    ov = example.synthesis.overrides
    for i in range(1, 4):
        assert np.array_equal(g.K1[i - 1], ov.K1[i])
        assert np.array_equal(g.H[i - 1], ov.H[i])
        reg = g.regulators[i - 1]
        assert np.allclose(g.K2[i - 1], reg.Gamma - g.K1[i - 1] @ reg.Pi)
    assert g.G1.shape == (3, 1) and g.G2.shape == (3, 1)
    assert np.allclose(g.G1 / g.k1, g.G2 / g.k2)
    assert not g.window.nonempty
    assert any("empty gain window" in w for w in g.warnings)
    assert any("alpha" in w for w in g.warnings)

def test_example_gains_without_overrides(example):
    g = synthesize_gains(example, use_overrides=False)
    for f, K1, H in zip(example.followers, g.K1, g.H):
        assert spectrum(f.A + f.B @ K1).max_real < 0
        assert spectrum(f.A - H @ f.C).max_real < 0

def test_assemble_rejects_bad_inputs(example):
    regs = regulator_solutions(example, use_overrides=False)
    args = (example.leader, example.followers, example.topology, example.noise)
    with pytest.raises(SynthesisError):
        assemble_gains(*args, regs, 0.65, -0.1, 0.3)
    with pytest.raises(SynthesisError):
        assemble_gains(*args, regs[:2], 0.65, 0.38, 0.3)

def test_assemble_certifies_override_gains():
    leader = LeaderModel([[0.0]], [[1.0]])
    f = FollowerModel([[1.0]], [[1.0]], [[1.0]])
    regs = [solve_regulator(f, leader)]
    with pytest.raises(HurwitzError):
        assemble_gains(leader, [f], star_topology(1), NoiseModel(), regs, 1.0, 2.0, 2.0,
                       overrides=GainOverrides(K1={1: [[0.0]]}))
    with pytest.raises(HurwitzError):
        assemble_gains(leader, [f], star_topology(1), NoiseModel(), regs, 1.0, 2.0, 2.0,
                       overrides=GainOverrides(H={1: [[-1.0]]}))

def test_gain_overrides_g1_g2_skip_window_checks():
    leader = LeaderModel([[0.0]], [[1.0]])
    f = FollowerModel([[-1.0]], [[1.0]], [[1.0]])
    ov = GainOverrides(G1=[[0.0]], G2=[[2.0]])
    g = assemble_gains(leader, [f], star_topology(1), NoiseModel(), [solve_regulator(f, leader)],
                       0.0, 0.0, 0.0, overrides=ov)
    assert g.G2[0, 0] == 2.0
    assert g.gare is None
    assert any("GARE unavailable" in w for w in g.warnings)


# --------------------------------- bounds -------------------------------------

def test_varpi1_star():
    nm = NoiseModel({(1, 0): [2.0]})
    assert varpi1(nm, np.zeros((1, 1)), np.array([[3.0]]), np.array([[4.0]]), star_topology(1)) == pytest.approx(9.0)

def test_varpi1_follower_edges():
    t = build_topology([[0, 1], [1, 0]], [1, 0])
    nm = NoiseModel({(1, 2): [1.0], (2, 1): [2.0], (1, 0): [3.0]})
    value = varpi1(nm, np.array([[1.0]]), np.array([[2.0]]), np.array([[2.0]]), t)
    assert value == pytest.approx(5.0 / 2.0 + 36.0 / 2.0)

def test_tracking_bound_value():
    assert tracking_bound_value(2.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0) == pytest.approx(24.0)
    assert tracking_bound_value(2.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0) == 0.0

def test_example_tracking_bound_is_positive(example):
    g = synthesize_gains(example)
    w1 = varpi1(example.noise, g.G1, g.G2, g.gare.P, example.topology)
    assert w1 > 0
    for i, f in enumerate(example.followers, start=1):
        b = tracking_bound(f, g, i, w1)
        assert math.isfinite(b) and b > 0

def test_tracking_bound_grows_with_varpi1(example):
    g = synthesize_gains(example)
    for i, f in enumerate(example.followers, start=1):
        bounds = [tracking_bound(f, g, i, w) for w in (0.5, 1.0, 2.0)]
        assert bounds[0] < bounds[1] < bounds[2]
    values = [tracking_bound_value(2.0, 1.0, 1.5, 1.5, w, 1.0, 1.0) for w in (0.5, 1.0, 2.0)]
    assert values[0] < values[1] < values[2]

def test_varpi1_matches_blockwise_sum(example):
    g = synthesize_gains(example)
    P, t, nm = g.gare.P, example.topology, example.noise
    p = g.G1.shape[1]
    M1 = g.G1.T @ np.linalg.inv(P) @ g.G1
    M2 = g.G2.T @ np.linalg.inv(P) @ g.G2
    expected = 0.0
    for i in range(1, t.n_followers + 1):
        for j in range(0, t.n_followers + 1):
            u = t.a(i, j) * nm.upsilon((i, j), p)
            expected += float(u @ (M2 if j == 0 else M1) @ u)
    assert varpi1(nm, g.G1, g.G2, P, t) == pytest.approx(expected, rel=1e-12)

def _scalar_gains():
    leader = LeaderModel([[0.0]], [[1.0]])
    f = FollowerModel([[-1.0]], [[1.0]], [[1.0]])
    reg = RegulatorSolution(np.array([[1.0]]), np.array([[1.0]]), 0.0)
    gare = solve_gare(LeaderModel([[-1.0]], [[1.0]]), 0.0)
    g = GainSet([np.array([[-1.0]])], [np.array([[2.0]])], [np.array([[1.0]])],
                np.zeros((1, 1)), np.array([[1.0]]), 0.0, 1.0, 0.0, [reg], gare)
    return leader, f, g

def test_initial_moments():
    m = initial_moments(np.array([1.0, 0.0]), np.array([1.0, 1.0]), np.array([0.0, 1.0]),
                        [np.array([2.0, 0.0]), np.array([1.0, 2.0])], np.eye(2))
    assert m == InitialMoments(estimation=1.0, manifold=2.0, leader_estimate=5.0)

def test_tracking_time_bound():
    _, f, g = _scalar_gains()
    m = InitialMoments(estimation=1.0, manifold=1.0, leader_estimate=1.0)
    tt = tracking_time_bound(f, g, 1, m, 1e-3, NoiseModel())
    assert tt.varpi2 > 1e-3
    assert tt.t_eps > 0 and math.isfinite(tt.t_eps)
    looser = tracking_time_bound(f, g, 1, m, 1e-1, NoiseModel())
    assert looser.t_eps <= tt.t_eps
    assert tracking_time_bound(f, g, 1, m, 2 * tt.varpi2, NoiseModel()).t_eps == 0.0
    zero = InitialMoments(0.0, 0.0, 0.0)
    assert tracking_time_bound(f, g, 1, zero, 1e-3, NoiseModel()) == (0.0, 0.0)

def test_tracking_time_bound_rejects_additive_noise():
    _, f, g = _scalar_gains()
    m = InitialMoments(1.0, 1.0, 1.0)
    with pytest.raises(SynthesisError):
        tracking_time_bound(f, g, 1, m, 1e-2, NoiseModel({(1, 0): [1.0]}))
    with pytest.raises(SynthesisError):
        tracking_time_bound(f, g, 1, m, 0.0, NoiseModel())

def test_scalar_lower_bound():
    p = ScalarParams(a0=0.0, c0=1.0, ai=-1.0, bi=1.0, ci=1.0, k=1.0, k1=0.0,
                     sigma=1.0, upsilon=1.0, k2=1.0)
    assert scalar_lower_bound(p) == pytest.approx(1.0)
    p2 = ScalarParams(a0=0.0, c0=1.0, ai=-1.0, bi=1.0, ci=1.0, k=1.0, k1=-3.0, sigma=0.3, upsilon=1.0)
    assert scalar_lower_bound(p2) == pytest.approx(0.09)

def test_scalar_lower_bound_needs_stable_loops():
    with pytest.raises(SynthesisError):
        scalar_lower_bound(ScalarParams(a0=2.0, c0=1.0, ai=-1.0, bi=1.0, ci=1.0, k=1.0, k1=0.0))
    with pytest.raises(SynthesisError):
        scalar_lower_bound(ScalarParams(a0=0.0, c0=1.0, ai=1.0, bi=1.0, ci=1.0, k=1.0, k1=0.0))
