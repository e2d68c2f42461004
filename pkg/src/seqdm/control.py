"""Linear-quadratic control and estimation.

Conventions: ``x' = A x + B u + w``, ``y = C x + v``, feedback ``u = -K x``,
filter ``x̂' = A x̂ + B u + L (y - C x̂)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

PSD_ATOL = 1e-9
STABILITY_BAND = 1e-9

STABLE, MARGINAL, UNSTABLE = "stable", "marginal", "unstable"


class SingularityError(np.linalg.LinAlgError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


def _matrix(a, name: str) -> np.ndarray:
    m = np.atleast_2d(np.array(a, dtype=float))
    if m.ndim != 2:
        raise ValueError(f"{name} must be a matrix")
    m.setflags(write=False)
    return m


def _check_psd(m: np.ndarray, name: str) -> None:
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got {m.shape}")
    if np.max(np.abs(m - m.T), initial=0.0) > PSD_ATOL:
        raise ValueError(f"{name} must be symmetric")
    if m.size and np.linalg.eigvalsh((m + m.T) / 2).min() < -PSD_ATOL:
        raise ValueError(f"{name} must be positive semidefinite")


@dataclass(frozen=True)
class LinearSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray | None = None
    Sw: np.ndarray | None = None
    Sv: np.ndarray | None = None

    def __post_init__(self):
        A = _matrix(self.A, "A")
        d = A.shape[0]
        if A.shape != (d, d):
            raise ValueError(f"A must be square, got {A.shape}")
        B = _matrix(self.B, "B")
        if B.shape[0] != d:
            raise ValueError(f"B must have {d} rows, got {B.shape}")
        C = _matrix(np.eye(d) if self.C is None else self.C, "C")
        if C.shape[1] != d:
            raise ValueError(f"C must have {d} columns, got {C.shape}")
        Sw = _matrix(np.eye(d) if self.Sw is None else self.Sw, "Sw")
        Sv = _matrix(np.zeros((C.shape[0],) * 2) if self.Sv is None else self.Sv, "Sv")
        if Sw.shape != (d, d) or Sv.shape != (C.shape[0],) * 2:
            raise ValueError("noise covariance dimensions do not match the system")
        _check_psd(Sw, "Sw")
        _check_psd(Sv, "Sv")
        for name, value in (("A", A), ("B", B), ("C", C), ("Sw", Sw), ("Sv", Sv)):
            object.__setattr__(self, name, value)

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    @property
    def output_dim(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class QuadraticCost:
    Phi: np.ndarray
    Psi: np.ndarray

    def __post_init__(self):
        Phi, Psi = _matrix(self.Phi, "Phi"), _matrix(self.Psi, "Psi")
        _check_psd(Phi, "Phi")
        _check_psd(Psi, "Psi")
        object.__setattr__(self, "Phi", Phi)
        object.__setattr__(self, "Psi", Psi)

    def check(self, sys: LinearSystem) -> None:
        if self.Phi.shape != (sys.state_dim,) * 2 or self.Psi.shape != (sys.input_dim,) * 2:
            raise ValueError("cost matrices do not match the system dimensions")


@dataclass(frozen=True)
class RiccatiSolution:
    M: np.ndarray
    K: np.ndarray
    residual: float
    converged: bool
    iterations: int
    marginal: bool = False


@dataclass(frozen=True)
class FilterGain:
    L: np.ndarray
    P: np.ndarray
    residual: float
    converged: bool
    iterations: int
    regularization: float = 0.0


def problem_to_dict(sys: LinearSystem, cost: QuadraticCost | None = None) -> dict:
    doc = {"A": sys.A.tolist(), "B": sys.B.tolist(), "C": sys.C.tolist(),
           "Sw": sys.Sw.tolist(), "Sv": sys.Sv.tolist()}
    if cost is not None:
        doc.update(Phi=cost.Phi.tolist(), Psi=cost.Psi.tolist())
    return doc


def problem_from_dict(doc: dict) -> tuple[LinearSystem, QuadraticCost | None]:
    sys = LinearSystem(doc["A"], doc["B"], doc.get("C"), doc.get("Sw"), doc.get("Sv"))
    cost = None
    if "Phi" in doc:
        cost = QuadraticCost(doc["Phi"], doc["Psi"])
        cost.check(sys)
    return sys, cost


def problem_to_json(sys: LinearSystem, cost: QuadraticCost | None = None) -> str:
    return json.dumps(problem_to_dict(sys, cost))


def problem_from_json(text: str) -> tuple[LinearSystem, QuadraticCost | None]:
    return problem_from_dict(json.loads(text))


def spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got shape {M.shape}")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def stability(M) -> str:
    rho = spectral_radius(M)
    if rho < 1 - STABILITY_BAND:
        return STABLE
    if rho <= 1 + STABILITY_BAND:
        return MARGINAL
    return UNSTABLE


def _gain(sys: LinearSystem, cost: QuadraticCost, M: np.ndarray, step: int | None = None) -> np.ndarray:
    S = cost.Psi + sys.B.T @ M @ sys.B
    if np.linalg.cond(S) > 1e14:
        raise SingularityError(f"Psi + B'MB is singular at step {step}", step)
    return np.linalg.solve(S, sys.B.T @ M @ sys.A)


def _riccati_map(sys: LinearSystem, cost: QuadraticCost, M: np.ndarray, step: int | None = None):
    K = _gain(sys, cost, M, step)
    A = sys.A
    M_next = cost.Phi + A.T @ M @ A - A.T @ M @ sys.B @ K
    return (M_next + M_next.T) / 2, K


def riccati_recursion(sys: LinearSystem, cost: QuadraticCost, horizon: int,
                      terminal=None) -> list[tuple[np.ndarray, np.ndarray]]:
    """Finite-horizon backward recursion from ``M_T = Phi`` (or ``terminal``).

    Returns ``[(M_0, K_0), ..., (M_{T-1}, K_{T-1})]`` where ``K_t`` is the
    optimal gain at step ``t``, computed from ``M_{t+1}``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    cost.check(sys)
    out = []
    M = cost.Phi.copy() if terminal is None else np.array(terminal, dtype=float)
    if M.shape != cost.Phi.shape:
        raise ValueError("terminal cost must match Phi")
    for t in range(horizon - 1, -1, -1):
        M, K = _riccati_map(sys, cost, M, step=t)
        out.append((M, K))
    out.reverse()
    return out


def solve_dare(sys: LinearSystem, cost: QuadraticCost, tol: float = 1e-10,
               max_iter: int = 100_000) -> RiccatiSolution:
    """Fixed point of the Riccati recursion.

    ``converged`` requires both a residual within ``tol`` and a strictly
    stable closed loop; marginal instances come back flagged with the last
    iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    cost.check(sys)
    M = cost.Phi.copy()
    residual = math.inf
    k = 0
    for k in range(1, max_iter + 1):
        M_next, _ = _riccati_map(sys, cost, M, step=k)
        residual = float(np.max(np.abs(M_next - M)))
        M = M_next
        if residual <= tol:
            break
    K = _gain(sys, cost, M)
    status = stability(sys.A - sys.B @ K)
    return RiccatiSolution(M=M, K=K, residual=residual,
                           converged=residual <= tol and status == STABLE,
                           iterations=k, marginal=status == MARGINAL)


def lqr_gain(sys: LinearSystem, cost: QuadraticCost, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    return solve_dare(sys, cost, tol, max_iter).K


def closed_loop(sys: LinearSystem, K, B_star=None) -> np.ndarray:
    """``A - B_star K``; ``B_star`` defaults to the model's ``B``."""
    B = sys.B if B_star is None else np.atleast_2d(np.asarray(B_star, dtype=float))
    return sys.A - B @ np.atleast_2d(np.asarray(K, dtype=float))


def lqr_cost(sys: LinearSystem, cost: QuadraticCost, K) -> float:
    """Steady-state expected cost ``tr((Phi + K'Psi K) X)`` of ``u = -Kx``.

    ``X`` is the stationary state covariance under process noise ``Sw``.
    Returns ``inf`` unless the closed loop is strictly stable.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Acl = closed_loop(sys, K)
    if spectral_radius(Acl) >= 1 - STABILITY_BAND:
        return math.inf
    X = scipy.linalg.solve_discrete_lyapunov(Acl, sys.Sw)
    return float(np.trace((cost.Phi + K.T @ cost.Psi @ K) @ X))


def kalman_gain(sys: LinearSystem, regularization: float | None = 1e-12, tol: float = 1e-10,
                max_iter: int = 100_000) -> FilterGain:
    """Steady-state predictor gain ``L = A P C'(C P C' + Sv)^{-1}``.

    ``P`` comes from iterating the filter covariance recursion from ``Sw``.
    A singular ``Sv`` is replaced by ``Sv + regularization * I``; pass
    ``regularization=None`` to make it an error instead.
    """
    A, C, Sw, Sv = sys.A, sys.C, sys.Sw, sys.Sv
    eps = 0.0
    if Sv.size and np.linalg.eigvalsh(Sv).min() <= 0:
        if regularization is None:
            raise SingularityError("measurement covariance is singular and regularization is disabled")
        eps = regularization
        Sv = Sv + eps * np.eye(Sv.shape[0])

    def gain(P):
        S = C @ P @ C.T + Sv
        if eps == 0 and np.linalg.cond(S) > 1e14:
            raise SingularityError("innovation covariance is singular")
        return np.linalg.solve(S, C @ P @ A.T).T

    P = Sw.copy()
    residual = math.inf
    k = 0
    for k in range(1, max_iter + 1):
        L = gain(P)
        P_next = A @ P @ A.T + Sw - L @ C @ P @ A.T
        P_next = (P_next + P_next.T) / 2
        residual = float(np.max(np.abs(P_next - P)))
        P = P_next
        if residual <= tol:
            break
    L = gain(P)
    status = stability(A - L @ C)
    return FilterGain(L=L, P=P, residual=residual, converged=residual <= tol and status == STABLE,
                      iterations=k, regularization=eps)


def dual_problem(sys: LinearSystem) -> tuple[LinearSystem, QuadraticCost]:
    """Control problem whose LQR gain is the transposed Kalman gain of ``sys``."""
    return LinearSystem(sys.A.T, sys.C.T), QuadraticCost(sys.Sw, sys.Sv)


def kalman_step(x_hat, u, y, sys: LinearSystem, L) -> np.ndarray:
    x_hat = np.asarray(x_hat, dtype=float)
    return sys.A @ x_hat + sys.B @ np.atleast_1d(u) + np.asarray(L) @ (np.atleast_1d(y) - sys.C @ x_hat)


def lqg_closed_loop(sys: LinearSystem, K, L, B_star=None) -> np.ndarray:
    """Closed-loop matrix over ``(x̂, e)`` with ``e = x - x̂`` when the plant uses ``B_star``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    L = np.asarray(L, dtype=float).reshape(sys.state_dim, sys.output_dim)
    B_star = sys.B if B_star is None else np.atleast_2d(np.asarray(B_star, dtype=float))
    A, B, C = sys.A, sys.B, sys.C
    return np.block([[A - B @ K, L @ C], [(B - B_star) @ K, A - L @ C]])


# ---- instances ------------------------------------------------------------

def newton_instance() -> tuple[LinearSystem, QuadraticCost]:
    """Double integrator with the rank-one cost whose optimal closed loop is [1 1; -2 -2]."""
    sys = LinearSystem([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]])
    return sys, QuadraticCost([[1.0, 0.5], [0.5, 0.25]], [[0.0]])


def shift_register_instance(psi: float = 0.0) -> tuple[LinearSystem, QuadraticCost]:
    sys = LinearSystem([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]])
    return sys, QuadraticCost([[1.0, -1.0], [-1.0, 1.0]], [[psi]])


def lqg_fragility_instance(sigma2: float = 1e-4) -> LinearSystem:
    return LinearSystem([[1.0, 1.0], [0.0, 1.0]], [[0.0], [1.0]], [[1.0, 0.0]],
                        [[1.0, 2.0], [2.0, 4.0]], [[sigma2]])


def random_system(rng: np.random.Generator, d: int, p: int, k: int) -> LinearSystem:
    """Random system with spectral radius in [0.3, 1.3] and positive definite noise covariances."""
    A = rng.normal(size=(d, d))
    A *= rng.uniform(0.3, 1.3) / max(spectral_radius(A), 1e-3)
    W = rng.normal(size=(d, d))
    V = rng.normal(size=(k, k))
    return LinearSystem(A, rng.normal(size=(d, p)), rng.normal(size=(k, d)),
                        W @ W.T + 0.1 * np.eye(d), V @ V.T + 0.1 * np.eye(k))


def shift_register_beta(psi: float, horizon: int | None = None) -> float:
    """Feedback coefficient on the second register, ``u = beta * x2``.

    Uses the finite-horizon gain at step 0 when ``horizon`` is given,
    otherwise the stationary gain.
    """
    sys, cost = shift_register_instance(psi)
    K = riccati_recursion(sys, cost, horizon)[0][1] if horizon else lqr_gain(sys, cost)
    return float(-K[0, 1])
