#!/usr/bin/env python3
"""
Dense real-matrix kernels shared by every other module

- Spectra sorted by (real part, imaginary part)
- Linear solves: exact when square/nonsingular, minimum-norm least squares otherwise
- Kronecker-assembled matrix equations  sum_k L_k X R_k = RHS
- Lyapunov equations  A X + X A^T + Q = 0
- Certified exponential decay envelopes  ||e^{At}|| <= rho e^{-rate t}

All functions are pure; inputs are coerced to float64 numpy arrays.
"""

import os
import logging
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg


log = logging.getLogger(__name__)

# ------------------------------- Config ---------------------------------------

RANK_TOL_SCALE = float(os.getenv("MAS_RANK_TOL_SCALE", "1.0"))

# residual above which an overdetermined system is declared inconsistent
CONSISTENCY_TOL = 1e-8
LYAP_RESIDUAL_TOL = 1e-10
ENVELOPE_SLACK = 1e-9


# --------------------------------- Errors -------------------------------------

class NumericsError(ValueError):
    pass

class NotHurwitzError(NumericsError):
    def __init__(self, eigenvalue: complex, what: str = "matrix"):
        super().__init__(f"{what} is not Hurwitz: eigenvalue {eigenvalue:.6g} has real part >= 0")
        self.eigenvalue = eigenvalue

class SingularSystemError(NumericsError):
    pass

class InconsistentSystemError(NumericsError):
    def __init__(self, residual: float):
        super().__init__(f"inconsistent linear system, least-squares residual {residual:.3e}")
        self.residual = residual


# ---------------------------------- Types -------------------------------------

@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray     # complex, ascending by (real, imag)

    def __len__(self) -> int:
        return len(self.eigenvalues)

    @property
    def real(self) -> np.ndarray:
        return self.eigenvalues.real

    @property
    def max_real(self) -> float:
        return float(self.eigenvalues.real.max()) if len(self.eigenvalues) else float("-inf")

    def rightmost(self) -> complex:
        return complex(self.eigenvalues[-1])


@dataclass(frozen=True)
class DecayEnvelope:
    rho: float
    rate: float

    def bound(self, t: Any) -> Any:
        return self.rho * np.exp(-self.rate * np.asarray(t, dtype=float))


@dataclass(frozen=True)
class KronSolution:
    solution: np.ndarray
    residual: float
    underdetermined: bool


# -------------------------- Small helper utilities ---------------------------

def as_matrix(data: Any, name: str = "matrix") -> np.ndarray:
    """Coerce nested lists / scalars / arrays to a finite 2-D float array."""
    try:
        arr = np.array(data, dtype=float)
    except (TypeError, ValueError) as e:
        raise NumericsError(f"{name}: not a numeric matrix ({e})") from None
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise NumericsError(f"{name}: expected 2-D, got {arr.ndim}-D")
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{name}: non-finite entries")
    return arr

def as_vector(data: Any, name: str = "vector") -> np.ndarray:
    arr = np.atleast_1d(np.array(data, dtype=float))
    if arr.ndim != 1:
        raise NumericsError(f"{name}: expected a flat vector")
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{name}: non-finite entries")
    return arr

def _square(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    M = np.asarray(M, dtype=float) if not np.iscomplexobj(M) else np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NumericsError(f"{name} must be square, got shape {M.shape}")
    return M

def rank_tolerance(M: np.ndarray, smax: Optional[float] = None) -> float:
    M = np.atleast_2d(M)
    if smax is None:
        smax = float(np.linalg.norm(M, 2)) if M.size else 0.0
    return max(M.shape) * np.finfo(float).eps * smax * RANK_TOL_SCALE

def numerical_rank(M: np.ndarray) -> int:
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > rank_tolerance(M, float(s[0]))))

def spectral_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(np.atleast_2d(M), 2))


# -------------------------------- Spectra -------------------------------------

def spectrum(M: np.ndarray) -> Spectrum:
    M = _square(M)
    try:
        w = linalg.eigvals(M)
    except linalg.LinAlgError as e:
        raise NumericsError(f"eigenvalue iteration did not converge: {e}") from None
    w = np.asarray(w, dtype=complex)
    if not np.all(np.isfinite(w)):
        raise NumericsError("eigenvalue iteration produced non-finite values")
    order = np.lexsort((w.imag, w.real))
    return Spectrum(w[order])

def is_hurwitz(M: np.ndarray, margin: float = 0.0) -> bool:
    return spectrum(M).max_real < -margin


# ------------------------------ Linear solves ---------------------------------

def solve_linear(M: np.ndarray, b: np.ndarray) -> KronSolution:
    """Solve M z = b: exact if square nonsingular, else minimum-norm least squares."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    if M.shape[0] != b.shape[0]:
        raise NumericsError(f"rhs length {b.shape[0]} does not match {M.shape[0]} rows")
    rank = numerical_rank(M)
    rows, cols = M.shape
    underdetermined = rank < cols
    if rows == cols and not underdetermined:
        z = linalg.solve(M, b)
    else:
        z, *_ = linalg.lstsq(M, b, lapack_driver="gelsd")
    residual = float(np.linalg.norm(M @ z - b))
    scale = 1.0 + float(np.linalg.norm(b)) + spectral_norm(M) * float(np.linalg.norm(z))
    if residual > CONSISTENCY_TOL * scale:
        raise InconsistentSystemError(residual)
    return KronSolution(z, residual, underdetermined)

def kron_solve(coeff_terms: Sequence[Tuple[np.ndarray, np.ndarray]], rhs: np.ndarray) -> KronSolution:
    """
    Solve sum_k L_k X R_k = rhs for X via vec(L X R) = (R^T kron L) vec(X).
    vec is column-major; X has shape (L.shape[1], R.shape[0]).
    """
    if not coeff_terms:
        raise NumericsError("kron_solve needs at least one coefficient term")
    rhs = as_matrix(rhs, "rhs")
    terms = [(as_matrix(L, "L"), as_matrix(R, "R")) for L, R in coeff_terms]
    xr, xc = terms[0][0].shape[1], terms[0][1].shape[0]
    M = np.zeros((rhs.size, xr * xc))
    for L, R in terms:
        if L.shape[1] != xr or R.shape[0] != xc:
            raise NumericsError("coefficient terms disagree on the unknown's shape")
        if (L.shape[0], R.shape[1]) != rhs.shape:
            raise NumericsError(f"term shape {(L.shape[0], R.shape[1])} does not match rhs {rhs.shape}")
        M += np.kron(R.T, L)
    sol = solve_linear(M, rhs.reshape(-1, order="F"))
    X = sol.solution.reshape((xr, xc), order="F")
    return KronSolution(X, sol.residual, sol.underdetermined)


# ------------------------------ Lyapunov --------------------------------------

def solve_lyapunov(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve A X + X A^T + Q = 0 (Bartels-Stewart)."""
    A = _square(as_matrix(A, "A"), "A")
    Q = as_matrix(Q, "Q")
    if Q.shape != A.shape:
        raise NumericsError(f"Q shape {Q.shape} does not match A {A.shape}")
    w = spectrum(A).eigenvalues
    gap = np.abs(w[:, None] + w[None, :]).min()
    if gap <= 1e3 * rank_tolerance(A) + 1e-13:
        raise SingularSystemError(
            f"Lyapunov operator singular: eigenvalues of A and -A^T meet (gap {gap:.3e})")
    X = linalg.solve_continuous_lyapunov(A, -Q)
    X = 0.5 * (X + X.T)
    residual = float(np.linalg.norm(A @ X + X @ A.T + Q))
    if residual > LYAP_RESIDUAL_TOL * (1.0 + float(np.linalg.norm(Q))):
        log.warning("Lyapunov residual %.3e above tolerance (||X|| = %.3e)", residual, np.linalg.norm(X))
    return X


# --------------------------- Decay envelopes ----------------------------------

def decay_envelope(A: np.ndarray, what: str = "matrix") -> DecayEnvelope:
    A = _square(as_matrix(A, what), what)
    spec = spectrum(A)
    if spec.max_real >= 0.0:
        raise NotHurwitzError(spec.rightmost(), what)
    Q = solve_lyapunov(A.T, np.eye(A.shape[0]))
    q = np.linalg.eigvalsh(Q)
    qmin, qmax = float(q[0]), float(q[-1])
    if qmin <= 0.0:
        raise NumericsError(f"{what}: Lyapunov certificate not positive definite")
    return DecayEnvelope(rho=float(np.sqrt(qmax / qmin)), rate=1.0 / (2.0 * qmax))

def check_envelope(A: np.ndarray, env: DecayEnvelope, samples: int = 200) -> bool:
    """Grid check of ||e^{At}||_2 <= rho e^{-rate t} on [0, 10/rate]."""
    A = as_matrix(A)
    for t in np.linspace(0.0, 10.0 / env.rate, samples):
        if spectral_norm(linalg.expm(A * t)) > env.rho * np.exp(-env.rate * t) + ENVELOPE_SLACK:
            return False
    return True
