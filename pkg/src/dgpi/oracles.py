"""Ground truth for checking learned solutions.

``solve_care`` gives the exact LQR optimum for linear plants; ``rollout``
simulates a closed loop and accumulates its running cost.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsModel, safe_rk4_step


class SolverError(RuntimeError):
    pass


@dataclass
class LqrProblem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=np.float64))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=np.float64))
        n, m = self.B.shape
        if self.A.shape != (n, n) or self.Q.shape != (n, n) or self.R.shape != (m, m):
            raise ValueError("inconsistent LQR matrix shapes")


@dataclass
class RiccatiSolution:
    P: np.ndarray
    K: np.ndarray
    residual: float
    iterations: int

    def closed_loop(self, problem: LqrProblem) -> np.ndarray:
        return problem.A - problem.B @ self.K


def eigenvalues_max_real(M) -> float:
    """Largest real part of the spectrum of a square matrix."""
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    try:
        eig = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigenvalue computation failed: {exc}") from exc
    return float(np.max(eig.real))


def solve_lyapunov(A, C) -> np.ndarray:
    """Solve ``A^T X + X A + C = 0`` by vectorisation (small n only)."""
    n = A.shape[0]
    eye = np.eye(n)
    # vec(A^T X) = (I kron A^T) vec X, vec(X A) = (A^T kron I) vec X  (column-major vec)
    L = np.kron(eye, A.T) + np.kron(A.T, eye)
    try:
        x = np.linalg.solve(L, -C.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise SolverError("singular Lyapunov operator") from exc
    X = x.reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def care_residual(problem: LqrProblem, P) -> float:
    A, B, Q, R = problem.A, problem.B, problem.Q, problem.R
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.max(np.abs(res)))


def stabilizing_gain(problem: LqrProblem) -> np.ndarray:
    """Some ``K`` with ``A - B K`` Hurwitz.

    Zero if the plant is already stable, otherwise the shifted-Lyapunov
    construction: with ``beta`` above the spectral radius, solve
    ``(A + beta I) Z + Z (A + beta I)^T = 2 B B^T`` and take ``K = B^T Z^-1``,
    which places the closed loop spectrum left of ``-beta``.
    """
    A, B = problem.A, problem.B
    n, m = B.shape
    if eigenvalues_max_real(A) < 0:
        return np.zeros((m, n))
    beta = float(np.max(np.abs(np.linalg.eigvals(A)))) + 1.0
    As = A + beta * np.eye(n)
    # solve_lyapunov uses A^T X + X A; pass As^T to get As Z + Z As^T
    Z = solve_lyapunov(As.T, -2.0 * B @ B.T)
    try:
        K = B.T @ np.linalg.inv(Z)
    except np.linalg.LinAlgError as exc:
        raise SolverError("plant is not stabilizable") from exc
    if eigenvalues_max_real(A - B @ K) >= 0:
        raise SolverError("plant is not stabilizable")
    return K


def solve_care(problem: LqrProblem, tol: float = 1e-13, max_iter: int = 100) -> RiccatiSolution:
    """Stabilizing CARE solution by Kleinman-Newton iteration."""
    A, B, Q, R = problem.A, problem.B, problem.Q, problem.R
    K = stabilizing_gain(problem)
    P_prev = None
    for it in range(1, max_iter + 1):
        Ak = A - B @ K
        if eigenvalues_max_real(Ak) >= 0:
            raise SolverError("Newton iterate lost stability")
        P = solve_lyapunov(Ak, Q + K.T @ R @ K)
        K = np.linalg.solve(R, B.T @ P)
        if P_prev is not None and np.max(np.abs(P - P_prev)) <= tol * max(1.0, np.max(np.abs(P))):
            break
        P_prev = P
    else:
        raise SolverError("Kleinman iteration did not converge")
    P = 0.5 * (P + P.T)
    return RiccatiSolution(P, K, care_residual(problem, P), it)


@dataclass
class Rollout:
    t: np.ndarray       # (T+1,)
    x: np.ndarray       # (T+1, ..., n)
    u: np.ndarray       # (T+1, ..., m)
    l: np.ndarray       # (T+1, ...)
    cost: np.ndarray    # accumulated cost per initial state
    truncated: np.ndarray  # per initial state: left the inflated box or the model's domain


def rollout(model: DynamicsModel, policy, x0, horizon: float, dt: float,
            inflate: float = 10.0) -> Rollout:
    """Closed-loop simulation with RK4 and zero-order-hold control.

    ``x0`` may be one state or a batch. A trajectory that leaves the state box
    inflated ``inflate`` times (or the model's domain) is frozen from then on
    and flagged as truncated; its cost stops accumulating.
    """
    if not dt > 0 or horizon < dt:
        raise ValueError("need dt > 0 and horizon >= dt")
    x = np.array(x0, dtype=np.float64)
    steps = int(round(horizon / dt))
    alive = np.ones(x.shape[:-1], dtype=bool)
    xs, us, ls = [], [], []
    for k in range(steps + 1):
        u = model.clamp(np.asarray(policy(x), dtype=np.float64))
        l = np.where(alive, model.utility(x, u), 0.0)
        if np.any(np.isnan(l)):
            raise FloatingPointError("NaN in rollout cost")
        xs.append(x.copy())
        us.append(u)
        ls.append(l)
        if k == steps:
            break
        nxt = x.copy()
        stepped = alive.copy()
        if np.any(alive):
            if x.ndim > 1:
                nxt[alive], stepped[alive] = safe_rk4_step(model, x[alive], u[alive], dt)
            else:
                nxt, stepped = safe_rk4_step(model, x, u, dt)
        ok = stepped & model.valid(nxt) & model.in_omega(nxt, inflate)
        newly_dead = alive & ~ok
        nxt = np.where(newly_dead[..., None], x, nxt)
        alive = alive & ok
        x = nxt
    l_arr = np.array(ls)
    cost = dt * (l_arr.sum(axis=0) - 0.5 * (l_arr[0] + l_arr[-1]))
    return Rollout(np.arange(steps + 1) * dt, np.array(xs), np.array(us), l_arr, cost, ~alive)


def settle_time(model: DynamicsModel, traj: Rollout, fraction: float = 0.01) -> np.ndarray:
    """First time the deviation from equilibrium drops below ``fraction`` of its start.

    ``inf`` where that never happens (or the trajectory was truncated).
    """
    dev = np.linalg.norm(traj.x - model.x_e, axis=-1)
    thresh = fraction * dev[0]
    below = dev <= thresh
    hit = np.argmax(below, axis=0)
    found = below.any(axis=0) & ~traj.truncated
    return np.where(found, traj.t[hit], np.inf)
