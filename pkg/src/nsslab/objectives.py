"""Objective oracles and Polyak-Lojasiewicz machinery.

Ships the abstract objective contract, the quadratic benchmark with its
classic PL modulus, and logistic regression with a numerically stable
loss, nonseparability decision by linear programming, smoothness
constants, and an empirical direction-uniform K-PL envelope.

Conventions: objective values are vectorized over leading axes; gradients
accept a (B, n) batch and return (B, n); Hessians take one point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import linprog
from scipy.special import expit

from .compfun import K, KINF, ScalarClassFunction, from_table


@dataclass(frozen=True)
class PLEnvelope:
    """A gradient-norm lower bound |grad J(z)| >= mu(J(z) - J*)."""

    mu: ScalarClassFunction
    kind: str  # classic_PL, Kinf, K, or PD
    construction: str = ""

    def __post_init__(self):
        if self.kind not in ("classic_PL", "Kinf", "K", "PD"):
            raise ValueError(f"unknown envelope kind {self.kind!r}")


@dataclass(frozen=True)
class Objective:
    """Value/gradient/Hessian oracle with known or estimated optimum.

    ``hessian=None`` falls back to central differences of the gradient.
    ``global_lipschitz`` is the gradient Lipschitz constant when known.
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    dim: int
    optimum_value: float
    minimizer: np.ndarray | None = None
    hessian: Callable[[np.ndarray], np.ndarray] | None = None
    domain_test: Callable[[np.ndarray], np.ndarray] | None = None
    global_lipschitz: float | None = None
    envelope: PLEnvelope | None = None
    label: str = ""

    def value_at(self, z) -> float:
        return float(np.asarray(self.value(np.asarray(z, dtype=float))))

    def gradient_at(self, z) -> np.ndarray:
        return np.asarray(self.gradient(np.asarray(z, dtype=float)[None]))[0]

    def hessian_at(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(z), dtype=float)
        h = 1e-5 * (1.0 + float(np.linalg.norm(z)))
        eye = np.eye(self.dim)
        cols = [(self.gradient_at(z + h * eye[i])
                 - self.gradient_at(z - h * eye[i])) / (2.0 * h)
                for i in range(self.dim)]
        H = np.column_stack(cols)
        return 0.5 * (H + H.T)

    def suboptimality(self, z) -> float:
        return self.value_at(z) - self.optimum_value

    def in_domain(self, z) -> bool:
        if self.domain_test is None:
            return True
        return bool(np.asarray(self.domain_test(np.asarray(z, dtype=float)[None]))[0])


def quadratic_objective(A: np.ndarray, b: np.ndarray,
                        offset: float = 0.0) -> Objective:
    """J(z) = 1/2 (z - z*)^T A (z - z*) + offset with z* = A^-1 b.

    Carries the classic PL envelope mu(h) = sqrt(2 lambda_min(A) h) and
    gradient Lipschitz constant lambda_max(A).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12):
        raise ValueError("A must be square symmetric")
    w = np.linalg.eigvalsh(A)
    if w.min() <= 0:
        raise ValueError(f"A must be positive definite, lambda_min={w.min():g}")
    zstar = np.linalg.solve(A, b)
    c_pl = 2.0 * w.min()

    def value(z):
        d = np.asarray(z, dtype=float) - zstar
        return 0.5 * np.einsum("...i,ij,...j->...", d, A, d) + offset

    def gradient(z):
        return (np.asarray(z, dtype=float) - zstar) @ A.T

    mu = ScalarClassFunction(lambda h: np.sqrt(c_pl * np.asarray(h, dtype=float)),
                             KINF, description=f"sqrt({c_pl:g} h)")
    env = PLEnvelope(mu=mu, kind="classic_PL",
                     construction=f"analytic, c = 2 lambda_min = {c_pl:g}")
    return Objective(value=value, gradient=gradient, dim=A.shape[0],
                     optimum_value=offset, minimizer=zstar,
                     hessian=lambda z: A.copy(),
                     global_lipschitz=float(w.max()), envelope=env,
                     label="quadratic")


@dataclass(frozen=True)
class LogisticModel:
    """Binary logistic regression data: columns of X are feature vectors."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y)
        if X.ndim != 2:
            raise ValueError("X must be n x N")
        if y.ndim != 1 or y.size != X.shape[1] or y.size < 1:
            raise ValueError("y must hold one label per column of X")
        if not np.all(np.isin(y, (0, 1))):
            raise ValueError("labels must be 0/1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", np.asarray(y, dtype=float))

    @property
    def n_features(self) -> int:
        return self.X.shape[0]

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]


def logistic_loss(model: LogisticModel, theta) -> float | np.ndarray:
    """Mean binary cross-entropy via softplus of signed logits.

    Stable for any logit magnitude; vectorized over leading axes of theta.
    """
    theta = np.asarray(theta, dtype=float)
    logits = theta @ model.X  # (..., N)
    signed = (2.0 * model.y - 1.0) * logits
    out = np.mean(np.logaddexp(0.0, -signed), axis=-1)
    return float(out) if theta.ndim == 1 else out


def logistic_gradient(model: LogisticModel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    p = expit(theta @ model.X)
    return (p - model.y) @ model.X.T / model.n_samples


def logistic_hessian(model: LogisticModel, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    p = expit(theta @ model.X)
    lam = p * (1.0 - p)
    return (model.X * lam) @ model.X.T / model.n_samples


def logistic_lipschitz_constant(model: LogisticModel) -> float:
    """Global gradient Lipschitz constant |X X^T| / (4N)."""
    gram = model.X @ model.X.T
    return float(np.linalg.eigvalsh(gram).max()) / (4.0 * model.n_samples)


def logistic_gradient_norm_bound(model: LogisticModel) -> float:
    """Global bound |grad J| <= |X| / sqrt(N); rules out unbounded PL moduli."""
    return float(np.linalg.norm(model.X, 2)) / np.sqrt(model.n_samples)


def fit_theta_star(model: LogisticModel, tol: float = 1e-10,
                   max_iter: int = 2_000_000) -> np.ndarray:
    """Minimizer by explicit-Euler gradient flow with step 1/L.

    Nonseparability makes the loss coercive and strict convexity (full row
    rank) makes the minimizer unique; descent from zero converges.
    """
    L = logistic_lipschitz_constant(model)
    if L == 0.0:
        return np.zeros(model.n_features)
    step = 1.0 / L
    theta = np.zeros(model.n_features)
    for _ in range(max_iter):
        g = logistic_gradient(model, theta)
        if np.linalg.norm(g) <= tol:
            return theta
        theta = theta - step * g
    raise RuntimeError(f"gradient flow did not reach |grad| <= {tol:g}; "
                       f"last norm {np.linalg.norm(g):g} (separable data?)")


def logistic_objective(model: LogisticModel,
                       theta_star: np.ndarray | None = None) -> Objective:
    """Objective wrapper; computes the minimizer if not supplied."""
    if theta_star is None:
        theta_star = fit_theta_star(model)
    jstar = logistic_loss(model, theta_star)
    return Objective(value=lambda th: logistic_loss(model, th),
                     gradient=lambda th: logistic_gradient(model, th),
                     dim=model.n_features, optimum_value=float(jstar),
                     minimizer=np.asarray(theta_star, dtype=float),
                     hessian=lambda th: logistic_hessian(model, th),
                     global_lipschitz=logistic_lipschitz_constant(model),
                     label="logistic")


@dataclass(frozen=True)
class SeparabilityReport:
    separable: bool
    witness: np.ndarray | None
    margin: float


def check_nonseparable(model: LogisticModel,
                       margin_tol: float = 1e-9) -> SeparabilityReport:
    """Decide whether some nonzero direction sign-separates the labels.

    Separable means a nonzero theta with theta.x_i >= 0 for y_i = 1 and
    theta.x_i <= 0 for y_i = 0.  Decided by maximizing the minimum signed
    margin t over the box |theta|_inf <= 1 (strictly separable iff t > 0),
    then probing the boundary cone for nonzero weakly separating
    directions when t = 0.
    """
    n, N = model.n_features, model.n_samples
    signs = 2.0 * model.y - 1.0
    M = (signs * model.X).T  # (N, n), rows sign_i * x_i^T

    # variables (theta, t): maximize t s.t. M theta >= t
    res = linprog(c=np.r_[np.zeros(n), -1.0],
                  A_ub=np.c_[-M, np.ones(N)], b_ub=np.zeros(N),
                  bounds=[(-1, 1)] * n + [(None, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"margin LP failed: {res.message}")
    margin = -res.fun
    if margin > margin_tol:
        return SeparabilityReport(True, res.x[:n], margin)

    # boundary: look for nonzero theta in the cone {M theta >= 0}
    for j in range(n):
        for sign in (1.0, -1.0):
            c = np.zeros(n)
            c[j] = -sign
            cone = linprog(c=c, A_ub=-M, b_ub=np.zeros(N),
                           bounds=[(-1, 1)] * n, method="highs")
            if cone.success and -cone.fun > margin_tol:
                return SeparabilityReport(True, cone.x, 0.0)
    return SeparabilityReport(False, None, margin)


def ray_slope(model: LogisticModel, theta0, r: float, dir) -> float:
    """Directional derivative of the loss along theta0 + r * dir.

    Strictly increasing in r; its r -> infinity limit is
    :func:`limiting_ray_slope`.
    """
    dir = np.asarray(dir, dtype=float).reshape(-1)
    if abs(np.linalg.norm(dir) - 1.0) > 1e-9:
        raise ValueError("dir must be a unit vector")
    theta = np.asarray(theta0, dtype=float).reshape(-1) + float(r) * dir
    return float(logistic_gradient(model, theta) @ dir)


def limiting_ray_slope(model: LogisticModel, dir) -> float:
    """Limit of ray_slope as r grows: misclassified-margin indicator sum."""
    dir = np.asarray(dir, dtype=float).reshape(-1)
    s = model.X.T @ dir  # (N,)
    p_inf = np.where(s > 0, 1.0, np.where(s < 0, 0.0, 0.5))
    return float((p_inf - model.y) @ s / model.n_samples)


def default_r_grid() -> np.ndarray:
    # geometric grid resolving both the linear regime and the saturation tail
    return np.r_[0.0, np.geomspace(1e-4, 1e2, 200)]


def estimate_kpl_envelope(obj: Objective, theta_star, n_dirs: int,
                          r_grid: np.ndarray | None = None,
                          seed: int = 0, h_points: int = 400,
                          shrink: float = 0.99) -> PLEnvelope:
    """Direction-uniform K-PL envelope from radial slope profiles.

    For each sampled unit direction: tabulate the radial slope zeta(r) of
    the objective from theta_star, integrate to the suboptimality profile
    psi(r), and read the slope as a function of suboptimality.  The
    pointwise minimum over directions, made nondecreasing by running
    maximum, is returned as a piecewise-linear class-K envelope.

    The minimum over finitely many directions over-estimates the true
    sphere minimum; ``shrink`` deflates the table to absorb that
    discretization optimism, and verify_pl on held-out points is the
    mandatory companion check.
    """
    theta_star = np.asarray(theta_star, dtype=float).reshape(-1)
    gnorm = float(np.linalg.norm(obj.gradient_at(theta_star)))
    if gnorm > 1e-6:
        raise ValueError(f"theta_star not stationary: |grad| = {gnorm:g}")
    if n_dirs < 1:
        raise ValueError("n_dirs must be >= 1")
    r_grid = default_r_grid() if r_grid is None else np.asarray(r_grid, dtype=float)
    if r_grid[0] != 0.0:
        r_grid = np.r_[0.0, r_grid]

    rng = np.random.Generator(np.random.Philox(key=seed))
    dirs = rng.standard_normal((n_dirs, theta_star.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    profiles = []  # (psi table, zeta table) per direction
    h_max = np.inf
    for d in dirs:
        pts = theta_star[None] + r_grid[:, None] * d[None]
        zeta = np.asarray(obj.gradient(pts)) @ d
        zeta[0] = 0.0
        psi = cumulative_trapezoid(zeta, r_grid, initial=0.0)
        profiles.append((psi, zeta))
        h_max = min(h_max, psi[-1])

    h_grid = np.r_[0.0, np.geomspace(max(h_max * 1e-8, 1e-300), h_max, h_points)]
    mu_vals = np.min([np.interp(h_grid, psi, zeta) for psi, zeta in profiles],
                     axis=0)
    mu_vals = shrink * np.maximum.accumulate(np.maximum(mu_vals, 0.0))
    mu_vals[0] = 0.0
    mu = from_table(h_grid, mu_vals, declared_class=K,
                    description=f"empirical envelope ({n_dirs} directions)")
    return PLEnvelope(mu=mu, kind="K",
                      construction=f"empirical, {n_dirs} directions, seed {seed}")


@dataclass(frozen=True)
class PLViolationReport:
    violations: list  # (point, grad_norm, mu_value)
    checked: int

    @property
    def clean(self) -> bool:
        return not self.violations


def verify_pl(obj: Objective, envelope: PLEnvelope, points,
              tol: float = 1e-9) -> PLViolationReport:
    """List points where the gradient norm undercuts the envelope."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    grads = np.asarray(obj.gradient(points))
    gnorms = np.linalg.norm(grads, axis=1)
    hs = np.asarray(obj.value(points), dtype=float) - obj.optimum_value
    violations = []
    for z, gn, h in zip(points, gnorms, hs):
        mu_h = float(envelope.mu(max(h, 0.0)))
        if gn < mu_h - tol:
            violations.append((z.copy(), float(gn), mu_h))
    return PLViolationReport(violations=violations, checked=len(points))


@dataclass(frozen=True)
class GradientBoundReport:
    bound: float
    max_norm: float
    max_ratio: float

    @property
    def holds(self) -> bool:
        return self.max_norm <= self.bound + 1e-12


def gradient_bound_check(model: LogisticModel, thetas) -> GradientBoundReport:
    """Check the global gradient bound |grad J| <= |X|/sqrt(N) on samples."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    bound = logistic_gradient_norm_bound(model)
    norms = np.linalg.norm(logistic_gradient(model, thetas), axis=1)
    max_norm = float(norms.max()) if norms.size else 0.0
    ratio = max_norm / bound if bound > 0 else (np.inf if max_norm > 0 else 0.0)
    return GradientBoundReport(bound=bound, max_norm=max_norm, max_ratio=ratio)


def load_logistic_csv(path: str) -> LogisticModel:
    """Dataset CSV: feature columns then one 0/1 label column, with header."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows)
    if data.ndim != 2 or data.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature and a label column")
    return LogisticModel(X=data[:, :-1].T, y=data[:, -1])


def envelope_to_csv(envelope: PLEnvelope, path: str,
                    h_grid: np.ndarray | None = None) -> None:
    h_grid = np.geomspace(1e-6, 10.0, 200) if h_grid is None else h_grid
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h", "mu"])
        for h in h_grid:
            writer.writerow([format(h, ".17g"), format(float(envelope.mu(h)), ".17g")])
