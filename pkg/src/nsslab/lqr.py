"""Continuous-time LQR policy optimization over the stabilizing gain set.

The objective is J2(K) = trace(P_K) with P_K the closed-loop Lyapunov
solution; its gradient is 2(RK - F^T P_K) Y_K.  The module ships dense
Kronecker Lyapunov solves, the Kleinman-Newton iteration to the Riccati
solution, the analytic K-PL modulus mu5(h) = h/(b1 h + b2), the sublevel
smoothness profile L3(h), and learning-rate schedules whose growth class
decides NSS versus scNSS of the policy-gradient diffusion.

Gain matrices are vectorized row-major into mn-dimensional states so the
generic diffusion simulator can drive policy-gradient flow directly; the
Frobenius inner product matches the vectorized Euclidean one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_continuous_are

from .objectives import Objective
from .sde import CovarianceSchedule

HURWITZ_MARGIN = 1e-10


class StabilityError(ValueError):
    """Matrix not Hurwitz (or gain outside the stabilizing set)."""


class ConditioningError(RuntimeError):
    """Lyapunov solve failed its residual contract."""


def spectral_abscissa(M: np.ndarray) -> float:
    return float(np.max(np.real(np.linalg.eigvals(M))))


def is_hurwitz(M: np.ndarray, margin: float = HURWITZ_MARGIN) -> bool:
    return spectral_abscissa(M) < -margin


@dataclass(frozen=True)
class LqrProblem:
    """System (A, F) with quadratic state/input weights (Q, R)."""

    A: np.ndarray
    F: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n, m = F.shape
        if A.shape != (n, n) or Q.shape != (n, n) or R.shape != (m, m):
            raise ValueError("inconsistent matrix dimensions")
        for name, M in (("Q", Q), ("R", R)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")
        try:
            # stabilizability probe; the Riccati solution exists iff (A,F)
            # is stabilizable for positive definite Q, R
            solve_continuous_are(A, F, Q, R)
        except Exception as exc:
            raise ValueError(f"(A, F) not stabilizable: {exc}") from exc
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.F.shape[1]


def solve_lyapunov(A_cl: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Unique symmetric P with A_cl^T P + P A_cl + M = 0.

    Dense Kronecker solve, adequate for desk scale (n <= 30).
    """
    A_cl = np.atleast_2d(np.asarray(A_cl, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = A_cl.shape[0]
    if n > 30:
        raise ValueError("dense Lyapunov solve capped at n = 30")
    if not np.allclose(M, M.T, atol=1e-10):
        raise ValueError("M must be symmetric")
    if not is_hurwitz(A_cl):
        raise StabilityError(
            f"A_cl not Hurwitz: spectral abscissa {spectral_abscissa(A_cl):g}")
    eye = np.eye(n)
    op = np.kron(eye, A_cl.T) + np.kron(A_cl.T, eye)
    try:
        vec = np.linalg.solve(op, -M.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(f"singular Lyapunov operator: {exc}") from exc
    P = vec.reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    res = np.linalg.norm(A_cl.T @ P + P @ A_cl + M, "fro")
    if res > 1e-10 * (np.linalg.norm(M, "fro") + np.linalg.norm(P, "fro")):
        raise ConditioningError(f"Lyapunov residual {res:g} above contract")
    return P


@dataclass(frozen=True)
class GainPoint:
    """A stabilizing gain with its cost, Lyapunov solutions, and gradient."""

    K: np.ndarray
    P: np.ndarray
    Y: np.ndarray
    cost: float
    grad: np.ndarray


def gain_point(problem: LqrProblem, K: np.ndarray) -> GainPoint:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (problem.m, problem.n):
        raise ValueError(f"K must be {problem.m}x{problem.n}")
    A_cl = problem.A - problem.F @ K
    if not is_hurwitz(A_cl):
        raise StabilityError(
            f"gain not stabilizing: spectral abscissa {spectral_abscissa(A_cl):g}")
    P = solve_lyapunov(A_cl, problem.Q + K.T @ problem.R @ K)
    Y = solve_lyapunov(A_cl.T, np.eye(problem.n))
    grad = 2.0 * (problem.R @ K - problem.F.T @ P) @ Y
    return GainPoint(K=K, P=P, Y=Y, cost=float(np.trace(P)), grad=grad)


def lqr_cost(problem: LqrProblem, K) -> float:
    return gain_point(problem, K).cost


def lqr_gradient(problem: LqrProblem, K) -> np.ndarray:
    return gain_point(problem, K).grad


@dataclass(frozen=True)
class LqrPlProfile:
    """Riccati solution with the analytic PL and smoothness constants."""

    Kstar: np.ndarray
    Pstar: np.ndarray
    Ystar: np.ndarray
    J2star: float
    b1: float
    b2: float
    a1: float
    a2: float


def solve_riccati(problem: LqrProblem,
                  K0: np.ndarray | None = None) -> LqrPlProfile:
    """Kleinman-Newton policy iteration K_{i+1} = R^-1 F^T P_{K_i}.

    Converges monotonically from any stabilizing start; K0 defaults to 0
    when A is already Hurwitz and is required otherwise.
    """
    if K0 is None:
        if not is_hurwitz(problem.A):
            raise ValueError("A unstable: supply a stabilizing initial gain")
        K = np.zeros((problem.m, problem.n))
    else:
        K = np.atleast_2d(np.asarray(K0, dtype=float))
    Rinv = np.linalg.inv(problem.R)
    point = gain_point(problem, K)
    for _ in range(200):
        K_next = Rinv @ problem.F.T @ point.P
        delta = np.linalg.norm(K_next - K, "fro")
        K = K_next
        point = gain_point(problem, K)  # raises StabilityError if it leaves G
        if delta <= 1e-12:
            break
    else:
        raise ConditioningError("Kleinman-Newton did not converge in 200 steps")

    Ystar = point.Y
    wy = np.linalg.eigvalsh(Ystar)
    ymin, ymax = float(wy.min()), float(wy.max())
    rmin = float(np.linalg.eigvalsh(problem.R).min())
    normF = float(np.linalg.norm(problem.F, 2))
    b1 = normF * np.sqrt(2.0 * (ymin + ymax)) / (rmin * np.sqrt(ymin))
    b2 = (np.linalg.norm(problem.A - problem.F @ K, "fro") ** 2
          * np.sqrt(ymin) * np.sqrt(ymin + ymax) / (np.sqrt(2.0) * normF))
    a1 = 2.0 * normF / rmin
    a2 = np.sqrt(2.0 * np.linalg.norm(problem.A, 2) / rmin)
    return LqrPlProfile(Kstar=K, Pstar=point.P, Ystar=Ystar,
                        J2star=point.cost, b1=b1, b2=b2, a1=a1, a2=a2)


def mu5(profile: LqrPlProfile, h) -> float | np.ndarray:
    """K-PL modulus h / (b1 h + b2), bounded by 1/b1."""
    h = np.asarray(h, dtype=float)
    out = h / (profile.b1 * h + profile.b2)
    return float(out) if out.ndim == 0 else out


def mu5_class_function(profile: LqrPlProfile):
    from .compfun import K as K_CLASS
    from .compfun import ScalarClassFunction
    return ScalarClassFunction(
        eval=lambda h: np.asarray(h, dtype=float)
        / (profile.b1 * np.asarray(h, dtype=float) + profile.b2),
        declared_class=K_CLASS, description="h/(b1 h + b2)")


def smoothness_profile_L3(profile: LqrPlProfile, problem: LqrProblem,
                          h) -> float | np.ndarray:
    """Gradient Lipschitz constant over the sublevel set at excess cost h."""
    h = np.asarray(h, dtype=float)
    s = profile.J2star + h
    qmin = float(np.linalg.eigvalsh(problem.Q).min())
    nR = float(np.linalg.norm(problem.R, 2))
    nF = float(np.linalg.norm(problem.F, 2))
    out = (2.0 * nR / qmin * s
           + 8.0 * profile.a2 * nF * nR / qmin**2 * s**2.5
           + 8.0 * nF * (profile.a1 * nR + nF) / qmin**2 * s**3)
    return float(out) if out.ndim == 0 else out


# learning-rate schedules and the limit of h^3 / eta(h) they realize
ETA_SCHEDULE_INFO = {
    "nss": "eta(h) = (1+h)^4; h^3/eta -> 0",
    "scnss": "eta(h) = (1+h)^3; h^3/eta -> 1",
}


def eta_schedule_lqr(profile: LqrPlProfile, mode: str, h) -> float | np.ndarray:
    if mode not in ETA_SCHEDULE_INFO:
        raise ValueError(f"unknown mode {mode!r}; choose from "
                         f"{sorted(ETA_SCHEDULE_INFO)}")
    h = np.asarray(h, dtype=float)
    power = 4 if mode == "nss" else 3
    out = (1.0 + h) ** power
    return float(out) if out.ndim == 0 else out


def vec_gain(K: np.ndarray) -> np.ndarray:
    return np.asarray(K, dtype=float).reshape(-1)


def unvec_gain(theta: np.ndarray, m: int, n: int) -> np.ndarray:
    return np.asarray(theta, dtype=float).reshape(m, n)


def batched_gain_stats(problem: LqrProblem, thetas: np.ndarray):
    """Cost and gradient over a batch of vectorized gains.

    Returns (hurwitz mask, costs, vectorized gradients); entries for
    non-stabilizing gains are NaN.  All solves are stacked so the batch is
    a single numpy pipeline.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    B = thetas.shape[0]
    n, m = problem.n, problem.m
    Ks = thetas.reshape(B, m, n)
    A_cl = problem.A[None] - np.einsum("nm,bmk->bnk", problem.F, Ks)
    ok = np.max(np.real(np.linalg.eigvals(A_cl)), axis=1) < -HURWITZ_MARGIN

    costs = np.full(B, np.nan)
    grads = np.full((B, m * n), np.nan)
    if not ok.any():
        return ok, costs, grads

    Ac = A_cl[ok]
    Kb = Ks[ok]
    nb = Ac.shape[0]
    eye = np.broadcast_to(np.eye(n), (nb, n, n))
    AcT = np.swapaxes(Ac, 1, 2)

    def bkron(X, Z):
        # kron(X_b, Z_b)[ki, lj] = X_b[k,l] Z_b[i,j]
        return np.einsum("bkl,bij->bkilj", X, Z).reshape(nb, n * n, n * n)

    # row-major vec of B^T P + P B + M = 0 gives the same two-term
    # operator kron(B^T, I) + kron(I, B^T) as the column-major form
    op_P = bkron(AcT, eye) + bkron(eye, AcT)
    M_P = problem.Q[None] + np.einsum("bmi,mk,bkj->bij", Kb, problem.R, Kb)
    P = np.linalg.solve(op_P, -M_P.reshape(nb, n * n)[..., None])[..., 0]
    P = P.reshape(nb, n, n)
    P = 0.5 * (P + np.swapaxes(P, 1, 2))

    op_Y = bkron(Ac, eye) + bkron(eye, Ac)
    Y = np.linalg.solve(op_Y, np.tile(-np.eye(n).reshape(-1), (nb, 1))[..., None])
    Y = Y[..., 0].reshape(nb, n, n)
    Y = 0.5 * (Y + np.swapaxes(Y, 1, 2))

    G = 2.0 * np.einsum("bmi,bij->bmj",
                        np.einsum("mk,bki->bmi", problem.R, Kb)
                        - np.einsum("nm,bni->bmi", problem.F, P),
                        Y)
    costs[ok] = np.trace(P, axis1=1, axis2=2)
    grads[ok] = G.reshape(nb, m * n)
    return ok, costs, grads


def lqr_objective(problem: LqrProblem, profile: LqrPlProfile) -> Objective:
    """J2 as an objective over vectorized gains, with Hurwitz domain test
    and the analytic mu5 K-PL envelope."""
    from .objectives import PLEnvelope

    m, n = problem.m, problem.n

    def value(theta):
        theta = np.asarray(theta, dtype=float)
        lead = theta.shape[:-1]
        _, costs, _ = batched_gain_stats(problem, theta.reshape(-1, m * n))
        return costs[0] if theta.ndim == 1 else costs.reshape(lead)

    def gradient(theta):
        theta = np.asarray(theta, dtype=float)
        lead = theta.shape[:-1]
        _, _, grads = batched_gain_stats(problem, theta.reshape(-1, m * n))
        return grads.reshape(lead + (m * n,))

    def domain_test(theta):
        theta = np.asarray(theta, dtype=float)
        lead = theta.shape[:-1]
        ok, _, _ = batched_gain_stats_mask(problem, theta.reshape(-1, m * n))
        return ok.reshape(lead)

    env = PLEnvelope(mu=mu5_class_function(profile), kind="K",
                     construction="analytic b1, b2 from the Riccati solution")
    return Objective(value=value, gradient=gradient, dim=m * n,
                     optimum_value=profile.J2star,
                     minimizer=vec_gain(profile.Kstar),
                     hessian=None, domain_test=domain_test,
                     global_lipschitz=None, envelope=env, label="lqr")


def batched_gain_stats_mask(problem: LqrProblem, thetas: np.ndarray):
    """Hurwitz mask only, skipping the Lyapunov solves."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    B = thetas.shape[0]
    Ks = thetas.reshape(B, problem.m, problem.n)
    A_cl = problem.A[None] - np.einsum("nm,bmk->bnk", problem.F, Ks)
    ok = np.max(np.real(np.linalg.eigvals(A_cl)), axis=1) < -HURWITZ_MARGIN
    return ok, None, None


def gain_noise_schedule(sigma1, n: int, horizon: float,
                        is_constant: bool = True) -> CovarianceSchedule:
    """Covariance schedule for matrix Brownian noise Sigma1(t) dW on gains.

    Row-major vectorization turns the matrix product Sigma1 W into
    kron(Sigma1, I_n) acting on the mn-dimensional state.
    """
    eye = np.eye(n)
    if callable(sigma1):
        return CovarianceSchedule(
            sigma=lambda t: np.kron(np.atleast_2d(sigma1(t)), eye),
            horizon=horizon, is_constant=False)
    mat = np.kron(np.atleast_2d(np.asarray(sigma1, dtype=float)), eye)
    return CovarianceSchedule.constant(mat, horizon)


def random_stabilizing_gains(problem: LqrProblem, profile: LqrPlProfile,
                             count: int, seed: int,
                             spread: float = 1.0) -> np.ndarray:
    """Stabilizing gains sampled by Gaussian perturbation of the optimum.

    Rejection-samples until ``count`` gains pass the Hurwitz test.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 1000 * count:
            raise RuntimeError("rejection sampling stalled; lower spread")
        K = profile.Kstar + spread * rng.standard_normal(profile.Kstar.shape)
        if is_hurwitz(problem.A - problem.F @ K):
            out.append(K)
    return np.array(out)
