#!/usr/bin/env python3
"""
Gain synthesis and theoretical bounds for noisy leader-following output tracking

- regulator equations  Pi A0 = A Pi + B Gamma,  C Pi = C0  (minimum-norm solution)
- generalized Riccati equation
      A0 P + P A0^T - 2 alpha P C0^T (I + C0 P C0^T)^{-1} C0 P + I = 0
  solved by integrating the Riccati flow, then polishing with damped Newton
- admissible gain window (k_lo, k_hi), cooperatability verdicts
- LQR stabilizer / observer gains (identity weights), Hurwitz certification
- GainSet assembly with printed-gain overrides
- bounds: varpi_1, limsup tracking bound, noise-free tracking time, scalar lower bound
"""

import os
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.integrate import solve_ivp

from graph import LEADER, Topology, spectral_summary
from numerics import (
    DecayEnvelope, InconsistentSystemError, NumericsError,
    as_matrix, decay_envelope, kron_solve, solve_lyapunov, spectral_norm, spectrum,
)
from plant import (
    FollowerModel, LeaderModel, NoiseModel, ScalarParams,
    is_observable, pbh_failures, regulator_rank_failures,
)


log = logging.getLogger(__name__)

# ------------------------------- Config ---------------------------------------

STABILITY_MARGIN = float(os.getenv("MAS_STABILITY_MARGIN", "1e-6"))
GARE_TOL = float(os.getenv("MAS_GARE_TOL", "1e-8"))

REGULATOR_TOL = 1e-8
OVERRIDE_REGULATOR_TOL = 1e-2     # printed 4-decimal Pi/Gamma are accepted up to this
GARE_FLOW_TOL = 1e-6
GARE_FLOW_WINDOW = 20.0
GARE_FLOW_BUDGET = 4000.0
GARE_BLOWUP = 1e12
NEWTON_MAX_ITER = 50


# --------------------------------- Errors -------------------------------------

class SynthesisError(RuntimeError):
    pass

class RegulatorError(SynthesisError):
    def __init__(self, msg: str, eigenvalue: Optional[complex] = None):
        super().__init__(msg)
        self.eigenvalue = eigenvalue

class GareError(SynthesisError):
    pass

class HurwitzError(SynthesisError):
    def __init__(self, what: str, eigenvalue: complex, margin: float):
        super().__init__(f"{what} not Hurwitz with margin {margin:g}: eigenvalue {eigenvalue:.6g}")
        self.eigenvalue = eigenvalue


# ---------------------------------- Types -------------------------------------

@dataclass(frozen=True, eq=False)
class RegulatorSolution:
    Pi: np.ndarray
    Gamma: np.ndarray
    residual: float


@dataclass(frozen=True, eq=False)
class GareSolution:
    P: np.ndarray
    alpha: float
    residual: float


@dataclass(frozen=True)
class GainWindow:
    lower: float
    upper: float
    nonempty: bool

    def contains(self, k: float) -> bool:
        return self.nonempty and self.lower < k < self.upper


@dataclass
class GainOverrides:
    """User-supplied gains keyed by 1-based follower index."""
    K1: Dict[int, np.ndarray] = field(default_factory=dict)
    H: Dict[int, np.ndarray] = field(default_factory=dict)
    Pi: Dict[int, np.ndarray] = field(default_factory=dict)
    Gamma: Dict[int, np.ndarray] = field(default_factory=dict)
    G1: Optional[np.ndarray] = None
    G2: Optional[np.ndarray] = None

    def is_empty(self) -> bool:
        return not (self.K1 or self.H or self.Pi or self.Gamma) and self.G1 is None and self.G2 is None


@dataclass(eq=False)
class GainSet:
    K1: List[np.ndarray]
    K2: List[np.ndarray]
    H: List[np.ndarray]
    G1: np.ndarray
    G2: np.ndarray
    k1: float
    k2: float
    alpha: float
    regulators: List[RegulatorSolution]
    gare: Optional[GareSolution] = None
    window: Optional[GainWindow] = None
    warnings: List[str] = field(default_factory=list)


class TrackingTime(NamedTuple):
    varpi2: float
    t_eps: float


@dataclass(frozen=True)
class InitialMoments:
    """E||x_i - xhat_i||^2, E||xhat_i - Pi_i x0||^2 and E||delta_bar||^2 at t = 0."""
    estimation: float
    manifold: float
    leader_estimate: float


# --------------------------- Leader spectrum ----------------------------------

def lambda0_u(A0: np.ndarray) -> float:
    return float(np.maximum(spectrum(A0).real, 0.0).sum())


# -------------------------- Regulator equations -------------------------------

def regulator_residual(f: FollowerModel, l: LeaderModel, Pi: np.ndarray, Gamma: np.ndarray) -> float:
    return float(np.linalg.norm(Pi @ l.A0 - f.A @ Pi - f.B @ Gamma)
                 + np.linalg.norm(f.C @ Pi - l.C0))

def solve_regulator(f: FollowerModel, l: LeaderModel) -> RegulatorSolution:
    """
    Stack both equations in the unknown Z = [Pi; Gamma]:
        [A B; C 0] Z I  +  [-I 0; 0 0] Z A0  =  [0; C0]
    """
    if f.p != l.p:
        raise RegulatorError(f"follower output dimension {f.p} differs from leader p={l.p}")
    bad = regulator_rank_failures(f, l)
    if bad:
        raise RegulatorError(f"regulator equations unsolvable: rank drops at eigenvalue {bad[0]:.6g}", bad[0])
    ni, m, n, p = f.n, f.m, l.n, l.p
    L1 = np.block([[f.A, f.B], [f.C, np.zeros((p, m))]])
    L2 = np.block([[-np.eye(ni), np.zeros((ni, m))], [np.zeros((p, ni + m))]])
    rhs = np.vstack([np.zeros((ni, n)), l.C0])
    try:
        sol = kron_solve([(L1, np.eye(n)), (L2, l.A0)], rhs)
    except InconsistentSystemError as e:
        raise RegulatorError(f"regulator equations inconsistent (residual {e.residual:.3e})") from None
    Pi, Gamma = sol.solution[:ni], sol.solution[ni:]
    residual = regulator_residual(f, l, Pi, Gamma)
    if residual > REGULATOR_TOL * (1.0 + spectral_norm(l.A0)):
        raise RegulatorError(f"regulator residual {residual:.3e} above tolerance")
    if sol.underdetermined:
        log.debug("regulator equations underdetermined (m=%d > p=%d); minimum-norm solution", m, p)
    return RegulatorSolution(Pi, Gamma, residual)

def check_regulator(f: FollowerModel, l: LeaderModel, Pi, Gamma, tol: float = OVERRIDE_REGULATOR_TOL) -> RegulatorSolution:
    """Validate a user-supplied (Pi, Gamma) by residual only."""
    Pi = as_matrix(Pi, "Pi")
    Gamma = as_matrix(Gamma, "Gamma")
    if Pi.shape != (f.n, l.n) or Gamma.shape != (f.m, l.n):
        raise RegulatorError(f"override shapes Pi {Pi.shape}, Gamma {Gamma.shape} do not fit the models")
    residual = regulator_residual(f, l, Pi, Gamma)
    if residual > tol * (1.0 + spectral_norm(l.A0)):
        raise RegulatorError(f"override (Pi, Gamma) residual {residual:.3e} above {tol:g}")
    return RegulatorSolution(Pi, Gamma, residual)


# ---------------------------------- GARE --------------------------------------

def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)

def gain_factor(l: LeaderModel, P: np.ndarray) -> np.ndarray:
    """P C0^T (I + C0 P C0^T)^{-1}"""
    S = np.eye(l.p) + l.C0 @ P @ l.C0.T
    return linalg.solve(S.T, (P @ l.C0.T).T).T

def gare_residual(l: LeaderModel, alpha: float, P: np.ndarray) -> np.ndarray:
    K = gain_factor(l, P)
    return l.A0 @ P + P @ l.A0.T - 2.0 * alpha * K @ l.C0 @ P + np.eye(l.n)

def _gare_jacobian(l: LeaderModel, alpha: float, P: np.ndarray) -> np.ndarray:
    # dR[E] = Ac E + E Ac^T + 2 alpha (K C0) E (K C0)^T,  Ac = A0 - 2 alpha K C0
    n = l.n
    KC = gain_factor(l, P) @ l.C0
    Ac = l.A0 - 2.0 * alpha * KC
    I = np.eye(n)
    return np.kron(I, Ac) + np.kron(Ac, I) + 2.0 * alpha * np.kron(KC, KC)

def _riccati_flow(l: LeaderModel, alpha: float, P: np.ndarray) -> np.ndarray:
    n = l.n

    def rhs(_t, y):
        return _sym(gare_residual(l, alpha, y.reshape(n, n))).ravel()

    elapsed = 0.0
    while True:
        sol = solve_ivp(rhs, (0.0, GARE_FLOW_WINDOW), P.ravel(), method="LSODA", rtol=1e-10, atol=1e-12)
        if not sol.success:
            raise GareError(f"Riccati flow integration failed: {sol.message}")
        P = _sym(sol.y[:, -1].reshape(n, n))
        elapsed += GARE_FLOW_WINDOW
        if not np.all(np.isfinite(P)) or np.abs(P).max() > GARE_BLOWUP:
            raise GareError(f"Riccati flow diverged (alpha={alpha:g}); no positive solution reached")
        r = float(np.linalg.norm(gare_residual(l, alpha, P)))
        if r < GARE_FLOW_TOL:
            return P
        if elapsed >= GARE_FLOW_BUDGET:
            raise GareError(f"Riccati flow did not settle within t={elapsed:g} (residual {r:.3e})")

def _newton_polish(l: LeaderModel, alpha: float, P: np.ndarray) -> np.ndarray:
    n = l.n
    for _ in range(NEWTON_MAX_ITER):
        R = gare_residual(l, alpha, P)
        r = float(np.linalg.norm(R))
        if r <= 1e-3 * GARE_TOL:
            break
        J = _gare_jacobian(l, alpha, P)
        try:
            d = linalg.solve(J, -R.reshape(-1, order="F"))
        except linalg.LinAlgError:
            d, *_ = linalg.lstsq(J, -R.reshape(-1, order="F"))
        dP = _sym(d.reshape((n, n), order="F"))
        step = 1.0
        while step > 1e-6:
            Pn = _sym(P + step * dP)
            if np.linalg.eigvalsh(Pn)[0] > 0 and np.linalg.norm(gare_residual(l, alpha, Pn)) < r:
                break
            step *= 0.5
        else:
            break
        P = Pn
    return P

def solve_gare(l: LeaderModel, alpha: float, P0: Optional[np.ndarray] = None) -> GareSolution:
    n = l.n
    if alpha < 0:
        raise GareError(f"alpha must be nonnegative, got {alpha:g}")
    lu = lambda0_u(l.A0)
    if lu > 0 and alpha < lu:
        raise GareError(f"alpha={alpha:g} below lambda0_u(A0)={lu:.6g}; positive solution not guaranteed")
    if alpha == 0.0:
        spec = spectrum(l.A0)
        if spec.max_real >= 0:
            raise GareError(f"alpha = 0 needs a Hurwitz A0 (eigenvalue {spec.rightmost():.6g})")
        try:
            P = solve_lyapunov(l.A0, np.eye(n))
        except NumericsError as e:
            raise GareError(str(e)) from None
    else:
        if not is_observable(l.A0, l.C0):
            raise GareError("(A0, C0) is not observable")
        P = np.eye(n) if P0 is None else _sym(as_matrix(P0, "P0"))
        P = _riccati_flow(l, alpha, P)
        P = _newton_polish(l, alpha, P)
    residual = float(np.linalg.norm(gare_residual(l, alpha, P)))
    if residual > GARE_TOL:
        raise GareError(f"GARE residual {residual:.3e} above tolerance {GARE_TOL:g}")
    if np.linalg.eigvalsh(P)[0] <= 0:
        raise GareError("GARE solution is not positive definite")
    log.debug("GARE alpha=%g solved, residual %.2e", alpha, residual)
    return GareSolution(P, float(alpha), residual)


# --------------------------- Windows / verdicts -------------------------------

def gain_window(lambda1: float, sigma_sq: float, alpha: float) -> GainWindow:
    if lambda1 <= 0:
        return GainWindow(math.nan, math.nan, False)
    if sigma_sq == 0:
        return GainWindow(alpha / lambda1, math.inf, True)
    disc = lambda1 * lambda1 - 4.0 * alpha * lambda1 * sigma_sq
    if disc <= 0:
        return GainWindow(math.nan, math.nan, False)
    root = math.sqrt(disc)
    den = 2.0 * lambda1 * sigma_sq
    return GainWindow((lambda1 - root) / den, (lambda1 + root) / den, True)

def alpha_interval(lambda0u: float, lambda1: float, sigma_sq: float) -> Tuple[float, float]:
    """[lambda0u, lambda0u + eps_bar) with eps_bar = (lambda1 - 4 sigma^2 lambda0u) / (4 sigma^2)."""
    if sigma_sq == 0:
        return lambda0u, math.inf
    eps_bar = (lambda1 - 4.0 * sigma_sq * lambda0u) / (4.0 * sigma_sq)
    return lambda0u, lambda0u + max(eps_bar, 0.0)

def cooperatability(sigma_sq: float, lambda0u: float, lambda1: float, scalar: bool = False) -> bool:
    """
    sigma^2 lambda0u < lambda1 / 4.  With scalar=True the scalar-star verdict
    sigma^2 a0 < 1/2 is returned instead, lambda0u then being the leader's a0.
    """
    if scalar:
        return sigma_sq * lambda0u < 0.5
    return sigma_sq * lambda0u < lambda1 / 4.0


# ------------------------ Stabilizer / observer -------------------------------

def certify_hurwitz(M: np.ndarray, what: str, margin: float = STABILITY_MARGIN) -> None:
    spec = spectrum(M)
    if spec.max_real > -margin:
        raise HurwitzError(what, spec.rightmost(), margin)

def design_stabilizer(A: np.ndarray, B: np.ndarray, margin: float = STABILITY_MARGIN) -> np.ndarray:
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    bad = pbh_failures(A, B)
    if bad:
        raise SynthesisError(f"(A, B) not stabilizable: uncontrollable mode {bad[0]:.6g}")
    try:
        X = linalg.solve_continuous_are(A, B, np.eye(A.shape[0]), np.eye(B.shape[1]))
    except (linalg.LinAlgError, ValueError) as e:
        raise SynthesisError(f"LQR Riccati solve failed: {e}") from None
    K = -B.T @ X
    certify_hurwitz(A + B @ K, "A + B K", margin)
    return K

def design_observer_gain(A: np.ndarray, C: np.ndarray, margin: float = STABILITY_MARGIN) -> np.ndarray:
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    bad = pbh_failures(A.T, C.T)
    if bad:
        raise SynthesisError(f"(A, C) not detectable: unobservable mode {bad[0]:.6g}")
    try:
        Y = linalg.solve_continuous_are(A.T, C.T, np.eye(A.shape[0]), np.eye(C.shape[0]))
    except (linalg.LinAlgError, ValueError) as e:
        raise SynthesisError(f"observer Riccati solve failed: {e}") from None
    H = Y @ C.T
    certify_hurwitz(A - H @ C, "A - H C", margin)
    return H


# ------------------------------- Assembly -------------------------------------

def _warn(warnings: List[str], msg: str) -> None:
    log.warning(msg)
    warnings.append(msg)

def assemble_gains(leader: LeaderModel, followers: Sequence[FollowerModel], topology: Topology,
                   noise: NoiseModel, regulators: Sequence[Optional[RegulatorSolution]],
                   alpha: float, k1: float, k2: float,
                   overrides: Optional[GainOverrides] = None,
                   gare: Optional[GareSolution] = None) -> GainSet:
    ov = overrides or GainOverrides()
    N = len(followers)
    if len(regulators) != N or any(r is None for r in regulators):
        missing = [i for i in range(1, N + 1) if i > len(regulators) or regulators[i - 1] is None]
        raise SynthesisError(f"missing regulator solution for follower(s) {missing}")
    if ov.G1 is None and k1 <= 0:
        raise SynthesisError(f"k1 must be positive, got {k1:g}")
    if ov.G2 is None and k2 <= 0:
        raise SynthesisError(f"k2 must be positive, got {k2:g}")

    warnings: List[str] = []
    summary = spectral_summary(topology)
    lam1 = summary.lambda1
    sigma_sq = noise.sigma_sq_max
    lu = lambda0_u(leader.A0)

    window = gain_window(lam1, sigma_sq, alpha)
    if not cooperatability(sigma_sq, lu, lam1):
        _warn(warnings, f"cooperatability fails: sigma^2*lambda0_u={sigma_sq * lu:.4g} >= lambda1/4={lam1 / 4:.4g}")
    lo, hi = alpha_interval(lu, lam1, sigma_sq)
    if not (lo <= alpha < hi):
        _warn(warnings, f"alpha={alpha:g} outside admissible interval [{lo:.4g}, {hi:.4g})")
    if not window.nonempty:
        _warn(warnings, f"empty gain window (lambda1={lam1:.4g}, sigma^2={sigma_sq:.4g}, alpha={alpha:g}); "
                        f"using k1={k1:g}, k2={k2:g} as given")
    else:
        for name, k, g in (("k1", k1, ov.G1), ("k2", k2, ov.G2)):
            if g is None and not window.contains(k):
                _warn(warnings, f"{name}={k:g} outside gain window ({window.lower:.4g}, {window.upper:.4g})")

    n, p = leader.n, leader.p
    if ov.G1 is not None and ov.G2 is not None:
        if gare is None:
            try:
                gare = solve_gare(leader, alpha)
            except SynthesisError as e:
                _warn(warnings, f"GARE unavailable ({e}); bounds needing P are disabled")
        G1, G2 = as_matrix(ov.G1, "G1"), as_matrix(ov.G2, "G2")
    else:
        if gare is None:
            gare = solve_gare(leader, alpha)
        factor = gain_factor(leader, gare.P)
        G1 = k1 * factor if ov.G1 is None else as_matrix(ov.G1, "G1")
        G2 = k2 * factor if ov.G2 is None else as_matrix(ov.G2, "G2")
    for name, G in (("G1", G1), ("G2", G2)):
        if G.shape != (n, p):
            raise SynthesisError(f"{name} has shape {G.shape}, expected {(n, p)}")

    K1s, K2s, Hs = [], [], []
    for i, (f, reg) in enumerate(zip(followers, regulators), start=1):
        if i in ov.K1:
            K1 = as_matrix(ov.K1[i], f"K1[{i}]")
            if K1.shape != (f.m, f.n):
                raise SynthesisError(f"K1[{i}] has shape {K1.shape}, expected {(f.m, f.n)}")
            certify_hurwitz(f.A + f.B @ K1, f"A{i} + B{i} K1{i}")
        else:
            K1 = design_stabilizer(f.A, f.B)
        if i in ov.H:
            H = as_matrix(ov.H[i], f"H[{i}]")
            if H.shape != (f.n, f.p):
                raise SynthesisError(f"H[{i}] has shape {H.shape}, expected {(f.n, f.p)}")
            certify_hurwitz(f.A - H @ f.C, f"A{i} - H{i} C{i}")
        else:
            H = design_observer_gain(f.A, f.C)
        K1s.append(K1)
        Hs.append(H)
        K2s.append(reg.Gamma - K1 @ reg.Pi)

    return GainSet(K1s, K2s, Hs, G1, G2, float(k1), float(k2), float(alpha),
                   list(regulators), gare, window, warnings)


# --------------------------------- Bounds -------------------------------------

def varpi1(noise: NoiseModel, G1: np.ndarray, G2: np.ndarray, P: np.ndarray, topology: Topology) -> float:
    """sum_j U_j^T (I_N kron G1^T P^-1 G1) U_j + U_0^T (I_N kron G2^T P^-1 G2) U_0"""
    N = topology.n_followers
    p = G1.shape[1]
    M1 = G1.T @ linalg.solve(P, G1, assume_a="pos")
    M2 = G2.T @ linalg.solve(P, G2, assume_a="pos")
    I = np.eye(N)

    def stacked(j: int) -> np.ndarray:
        return np.concatenate([topology.a(i, j) * noise.upsilon((i, j), p) for i in range(1, N + 1)])

    total = sum(float(stacked(j) @ np.kron(I, M1) @ stacked(j)) for j in range(1, N + 1))
    U0 = stacked(LEADER)
    total += float(U0 @ np.kron(I, M2) @ U0)
    return total

def tracking_bound_value(rho1: float, rho2: float, p_lambda_max: float, p_norm: float,
                         varpi1_value: float, c_norm: float, bk2_norm: float) -> float:
    return (6.0 * rho1 ** 2 * p_lambda_max ** 2 * varpi1_value ** 2 * p_norm ** 2 / rho2 ** 2
            * c_norm ** 2 * bk2_norm ** 2)

def _needs_gare(gains: GainSet) -> np.ndarray:
    if gains.gare is None:
        raise SynthesisError("bound needs the GARE solution P, which is not available")
    return gains.gare.P

def tracking_bound(follower: FollowerModel, gains: GainSet, index: int, varpi1_value: float) -> float:
    """Upper bound on limsup E||y_i - y_0||^2 for follower `index` (1-based)."""
    P = _needs_gare(gains)
    K1, K2 = gains.K1[index - 1], gains.K2[index - 1]
    env = decay_envelope(follower.A + follower.B @ K1, f"A{index} + B{index} K1{index}")
    return tracking_bound_value(env.rho, env.rate, float(np.linalg.eigvalsh(P)[-1]), spectral_norm(P),
                                varpi1_value, spectral_norm(follower.C), spectral_norm(follower.B @ K2))

def initial_moments(x0: np.ndarray, x: np.ndarray, xhat: np.ndarray, xhat0_all: Sequence[np.ndarray],
                    Pi: np.ndarray) -> InitialMoments:
    """Deterministic initial moments of one follower; leader_estimate stacks every follower's xhat_j0 - x0."""
    x0 = np.asarray(x0, dtype=float)
    return InitialMoments(
        estimation=float(np.sum((np.asarray(x) - np.asarray(xhat)) ** 2)),
        manifold=float(np.sum((np.asarray(xhat) - Pi @ x0) ** 2)),
        leader_estimate=float(sum(np.sum((np.asarray(v) - x0) ** 2) for v in xhat0_all)),
    )

def tracking_time_bound(follower: FollowerModel, gains: GainSet, index: int,
                        moments: InitialMoments, epsilon: float, noise: NoiseModel) -> TrackingTime:
    if noise.has_additive:
        raise SynthesisError("tracking-time bound requires zero additive noise")
    if epsilon <= 0:
        raise SynthesisError(f"epsilon must be positive, got {epsilon:g}")
    P = _needs_gare(gains)
    K1, K2, H = gains.K1[index - 1], gains.K2[index - 1], gains.H[index - 1]
    A, B, C = follower.A, follower.B, follower.C
    ctrl: DecayEnvelope = decay_envelope(A + B @ K1, f"A{index} + B{index} K1{index}")
    obs: DecayEnvelope = decay_envelope(A - H @ C, f"A{index} - H{index} C{index}")
    rho1, rho2, rho3, rho4 = ctrl.rho, ctrl.rate, obs.rho, obs.rate
    pev = np.linalg.eigvalsh(P)
    p_norm = spectral_norm(P)
    c2 = spectral_norm(C) ** 2
    varpi2 = (2.0 * rho3 ** 2 * c2 * moments.estimation
              + 6.0 * rho1 ** 2 * c2 * moments.manifold
              + 6.0 * rho1 ** 2 * c2 * spectral_norm(B @ K2) ** 2 * pev[-1] / pev[0] * moments.leader_estimate
              + 6.0 * rho1 ** 2 * rho3 ** 2 * c2 * spectral_norm(H @ C) ** 2 * moments.estimation)
    if epsilon >= varpi2:
        return TrackingTime(varpi2, 0.0)
    t1 = 2.0 / min(rho2 ** 2, rho4 ** 2, 1.0 / (4.0 * p_norm ** 2))
    t2 = math.log(varpi2 / epsilon) / (2.0 * min(rho2, rho4, 1.0 / (2.0 * p_norm)))
    return TrackingTime(varpi2, max(t1, t2))

def scalar_lower_bound(params: ScalarParams) -> float:
    """Lower bound on liminf E|y_i - y_0|^2 for the scalar star system."""
    p = params
    d0 = p.a0 - p.k * p.c0
    di = p.ai + p.bi * p.k1
    if d0 >= 0:
        raise SynthesisError(f"need a0 - k c0 < 0, got {d0:g}")
    if di >= 0:
        raise SynthesisError(f"need ai + bi k1i < 0, got {di:g}")
    num = (p.ci ** 2 * p.bi ** 2 * p.k2_value ** 2 * p.k ** 4
           * p.sigma ** 2 * p.upsilon ** 2 * p.c0 ** 2)
    return num / (d0 ** 2 * di ** 2)
