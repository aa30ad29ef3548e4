#!/usr/bin/env python3
"""
Leader / follower model containers and the standing-assumption checks.

- LeaderModel (A0, C0), FollowerModel (A, B, C), NoiseModel (per-edge intensities)
- PBH stabilizability / detectability at closed right-half-plane eigenvalues
- observability of the leader pair (A0, C0)
- regulator solvability rank test  rank [lam I - A, B; C, 0] = n_i + p  for lam in sigma(A0)
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from numerics import as_matrix, as_vector, numerical_rank, spectrum
from graph import LEADER, Topology, edges


Edge = Tuple[int, int]


class ModelError(ValueError):
    pass


# ---------------------------------- Models ------------------------------------

@dataclass(frozen=True, eq=False)
class LeaderModel:
    A0: np.ndarray
    C0: np.ndarray

    def __post_init__(self):
        A0 = as_matrix(self.A0, "A0")
        C0 = as_matrix(self.C0, "C0")
        if A0.shape[0] != A0.shape[1]:
            raise ModelError(f"A0 must be square, got {A0.shape}")
        if C0.shape[1] != A0.shape[0]:
            raise ModelError(f"C0 has {C0.shape[1]} columns, A0 is {A0.shape[0]}x{A0.shape[0]}")
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "C0", C0)

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def p(self) -> int:
        return self.C0.shape[0]


@dataclass(frozen=True, eq=False)
class FollowerModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = as_matrix(self.A, "A")
        B = as_matrix(self.B, "B")
        C = as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ModelError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ModelError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise ModelError(f"C has {C.shape[1]} columns, expected {n}")
        if C.shape[0] > B.shape[1]:
            raise ModelError(f"output dimension p={C.shape[0]} exceeds input dimension m={B.shape[1]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Per ordered edge (i, j): additive intensity vector in R^p and multiplicative scalar."""
    additive: Dict[Edge, np.ndarray] = field(default_factory=dict)
    multiplicative: Dict[Edge, float] = field(default_factory=dict)

    def __post_init__(self):
        add = {tuple(k): as_vector(v, f"additive{tuple(k)}") for k, v in self.additive.items()}
        mul = {}
        for k, v in self.multiplicative.items():
            v = float(v)
            if not np.isfinite(v):
                raise ModelError(f"multiplicative{tuple(k)}: non-finite")
            mul[tuple(k)] = v
        object.__setattr__(self, "additive", add)
        object.__setattr__(self, "multiplicative", mul)

    def upsilon(self, edge: Edge, p: int) -> np.ndarray:
        v = self.additive.get(tuple(edge))
        return np.zeros(p) if v is None else v

    def sigma(self, edge: Edge) -> float:
        return self.multiplicative.get(tuple(edge), 0.0)

    @property
    def sigma_sq_max(self) -> float:
        return max((s * s for s in self.multiplicative.values()), default=0.0)

    @property
    def has_additive(self) -> bool:
        return any(np.any(v != 0.0) for v in self.additive.values())

    def without_additive(self) -> "NoiseModel":
        return NoiseModel({}, dict(self.multiplicative))


def uniform_noise(t: Topology, p: int, upsilon: float, sigma: float) -> NoiseModel:
    """Same additive intensity (every output channel) and sigma on every edge."""
    es = edges(t)
    add = {e: np.full(p, float(upsilon)) for e in es} if upsilon else {}
    mul = {e: float(sigma) for e in es} if sigma else {}
    return NoiseModel(add, mul)

def check_noise_edges(noise: NoiseModel, t: Topology, p: int) -> None:
    known = set(edges(t))
    for e, v in noise.additive.items():
        if e not in known:
            raise ModelError(f"additive noise on edge {e} which is not in the topology")
        if v.shape != (p,):
            raise ModelError(f"additive noise on edge {e} has length {v.shape[0]}, expected p={p}")
    for e in noise.multiplicative:
        if e not in known:
            raise ModelError(f"multiplicative noise on edge {e} which is not in the topology")


# ------------------------------ Scalar params ---------------------------------

@dataclass(frozen=True)
class ScalarParams:
    """Scalar leader / follower / star-observer constants of the scalar theorems."""
    a0: float
    c0: float
    ai: float
    bi: float
    ci: float
    k: float
    k1: float
    sigma: float = 0.0          # sigma_i0
    upsilon: float = 0.0        # Upsilon_i0
    k2: Optional[float] = None  # defaults to gamma - k1 * pi
    G: Optional[float] = None   # leader-observer gain, defaults to k
    h: Optional[float] = None   # follower observer gain, defaults to a pole at -1

    @property
    def pi(self) -> float:
        return self.c0 / self.ci

    @property
    def gamma(self) -> float:
        return (self.a0 * self.c0 - self.ai * self.c0) / (self.bi * self.ci)

    @property
    def k2_value(self) -> float:
        return self.gamma - self.k1 * self.pi if self.k2 is None else self.k2

    @property
    def G_value(self) -> float:
        return self.k if self.G is None else self.G

    @property
    def h_value(self) -> float:
        return (self.ai + 1.0) / self.ci if self.h is None else self.h


# ------------------------------ Assumptions -----------------------------------

@dataclass(frozen=True)
class Diagnostic:
    check: str          # stabilizable | detectable | observable | regulator
    agent: int          # 0 = leader, i >= 1 follower
    eigenvalue: complex

    def __str__(self) -> str:
        who = "leader" if self.agent == LEADER else f"follower {self.agent}"
        return f"{self.check} fails for {who} at eigenvalue {self.eigenvalue:.6g}"


@dataclass
class AssumptionReport:
    stabilizable: List[bool]
    detectable: List[bool]
    leader_observable: bool
    regulator_solvable: List[bool]
    controllable: List[bool] = field(default_factory=list)
    observable: List[bool] = field(default_factory=list)
    diagnostics: List[Diagnostic] = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return (all(self.stabilizable) and all(self.detectable)
                and self.leader_observable and all(self.regulator_solvable))

    def failures(self) -> List[str]:
        return [str(d) for d in self.diagnostics]


def controllability_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)

def observability_matrix(A: np.ndarray, C: np.ndarray) -> np.ndarray:
    return controllability_matrix(np.asarray(A).T, np.asarray(C).T).T

def is_controllable(A: np.ndarray, B: np.ndarray) -> bool:
    return numerical_rank(controllability_matrix(A, B)) == A.shape[0]

def is_observable(A: np.ndarray, C: np.ndarray) -> bool:
    return numerical_rank(observability_matrix(A, C)) == A.shape[0]

def pbh_failures(A: np.ndarray, B: np.ndarray, rhp_only: bool = True) -> List[complex]:
    """Eigenvalues lam of A (Re lam >= -tol when rhp_only) where rank [lam I - A, B] < n."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    n = A.shape[0]
    tol = max(1e-9, 1e3 * np.finfo(float).eps * max(1.0, float(np.abs(A).max())))
    bad: List[complex] = []
    for lam in spectrum(A).eigenvalues:
        if rhp_only and lam.real < -tol:
            continue
        M = np.hstack([lam * np.eye(n) - A, B.astype(complex)])
        if numerical_rank(M) < n:
            bad.append(complex(lam))
    return bad

def regulator_rank_failures(f: FollowerModel, l: LeaderModel) -> List[complex]:
    n, m, p = f.n, f.m, f.p
    bad: List[complex] = []
    for lam in spectrum(l.A0).eigenvalues:
        M = np.block([[lam * np.eye(n) - f.A, f.B.astype(complex)],
                      [f.C.astype(complex), np.zeros((p, m), dtype=complex)]])
        if numerical_rank(M) < n + p:
            bad.append(complex(lam))
    return bad

def _weakest_pbh_eigenvalue(A: np.ndarray, C: np.ndarray) -> complex:
    n = A.shape[0]
    best, best_s = complex("nan"), np.inf
    for lam in spectrum(A).eigenvalues:
        s = np.linalg.svd(np.vstack([lam * np.eye(n) - A, C]), compute_uv=False)[-1]
        if s < best_s:
            best, best_s = complex(lam), s
    return best


def check_assumptions(leader: LeaderModel, followers: Sequence[FollowerModel]) -> AssumptionReport:
    p = leader.p
    for i, f in enumerate(followers, start=1):
        if f.p != p:
            raise ModelError(f"follower {i} output dimension {f.p} differs from leader p={p}")
    report = AssumptionReport([], [], True, [])
    for i, f in enumerate(followers, start=1):
        stab = pbh_failures(f.A, f.B)
        det = pbh_failures(f.A.T, f.C.T)
        reg = regulator_rank_failures(f, leader)
        report.stabilizable.append(not stab)
        report.detectable.append(not det)
        report.regulator_solvable.append(not reg)
        report.controllable.append(is_controllable(f.A, f.B))
        report.observable.append(is_observable(f.A, f.C))
        report.diagnostics += [Diagnostic("stabilizable", i, lam) for lam in stab]
        report.diagnostics += [Diagnostic("detectable", i, lam) for lam in det]
        report.diagnostics += [Diagnostic("regulator", i, lam) for lam in reg]
    report.leader_observable = is_observable(leader.A0, leader.C0)
    if not report.leader_observable:
        unobs = pbh_failures(leader.A0.T, leader.C0.T, rhp_only=False)
        if not unobs:
            # matrix-rank and PBH disagree numerically; report the weakest mode
            unobs = [_weakest_pbh_eigenvalue(leader.A0, leader.C0)]
        report.diagnostics += [Diagnostic("observable", LEADER, lam) for lam in unobs]
    return report
