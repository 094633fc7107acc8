"""Langevin diffusion constructions over objective oracles.

Builds the overdamped dynamics dz = -eta(J - J*) grad J dt + G Sigma dB
and the underdamped dynamics dz = v dt, dv = -eta grad J dt - c v dt
+ G Sigma dB (noise on the velocity block only), in two flavors each:
constant coefficients (needs a global gradient Lipschitz constant) and
state-scheduled coefficients built from a sampled smoothness ladder.

Also houses the Lyapunov candidates V2 (mixed quadratic) and V3
(smoothed-potential form), the phi ladder that upper-bounds the squared
gradient by a function of suboptimality, and the dissipation-certificate
triples the two candidate families satisfy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .compfun import K, KINF, ScalarClassFunction
from .lyapcert import DissipationCertificate, SizeFunction
from .objectives import Objective
from .sde import DiffusionModel


@dataclass(frozen=True)
class OverdampedConfig:
    """Overdamped dynamics configuration.

    ``G=None`` means the identity diffusion field with K_G = sqrt(n);
    ``eta=None`` means the constant learning rate 1, otherwise a callable
    of suboptimality, vectorized over a batch.
    """

    objective: Objective
    G: Callable[[np.ndarray], np.ndarray] | None = None
    K_G: float | None = None
    eta: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.G is not None and self.K_G is None:
            raise ValueError("K_G must accompany a custom diffusion field G")

    @property
    def k_g(self) -> float:
        if self.K_G is not None:
            return float(self.K_G)
        return float(np.sqrt(self.objective.dim))


def build_overdamped(config: OverdampedConfig) -> DiffusionModel:
    obj = config.objective
    eta = config.eta

    def drift(z):
        g = np.asarray(obj.gradient(z))
        if eta is None:
            return -g
        h = np.asarray(obj.value(z), dtype=float) - obj.optimum_value
        return -np.asarray(eta(h), dtype=float)[..., None] * g

    diffusion = None
    if config.G is not None:
        diffusion = lambda z: np.asarray(config.G(z), dtype=float)

    return DiffusionModel(state_dim=obj.dim, noise_dim=obj.dim, drift=drift,
                          diffusion=diffusion, domain_test=obj.domain_test,
                          equilibrium=obj.minimizer,
                          label=f"overdamped[{obj.label}]")


@dataclass(frozen=True)
class UnderdampedConfig:
    """Underdamped dynamics configuration on the (z, v) product space.

    Constant mode derives the Lyapunov weights
    lambda1 = 0.9 * min{1/(2 eta + c), 1/(2L), c/(2(eta L + c^2))} and
    lambda2 = (1 - lambda1 c)/eta, which need the global Lipschitz
    constant L.  Scheduled mode sets c(z) = |hess J(z)|/2 + 1/2 and
    eta(z) = (phi2'(J(z) - J*) - c(z))/2 >= 1 and needs a PhiLadder.
    """

    objective: Objective
    mode: str = "constant_coeff"
    eta: float = 1.0
    c: float = 1.0
    G: Callable[[np.ndarray], np.ndarray] | None = None
    K_G: float | None = None
    phi: "PhiLadder | None" = None

    def __post_init__(self):
        if self.mode not in ("constant_coeff", "scheduled"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "constant_coeff":
            if self.objective.global_lipschitz is None:
                raise ValueError("constant mode needs a global gradient "
                                 "Lipschitz constant; use scheduled mode")
            if self.eta <= 0 or self.c <= 0:
                raise ValueError("eta and c must be positive")
        else:
            if self.phi is None:
                raise ValueError("scheduled mode needs a PhiLadder "
                                 "(see phi_functions)")
        if self.G is not None and self.K_G is None:
            raise ValueError("K_G must accompany a custom diffusion field G")

    @property
    def k_g(self) -> float:
        if self.K_G is not None:
            return float(self.K_G)
        return float(np.sqrt(self.objective.dim))

    @property
    def lambdas(self) -> tuple[float, float, float]:
        """(lambda1, lambda2, lambda3) of the V2 construction."""
        if self.mode != "constant_coeff":
            raise ValueError("lambda weights exist only in constant mode")
        L = self.objective.global_lipschitz
        eta, c = self.eta, self.c
        cap = min(1.0 / (2.0 * eta + c), 1.0 / (2.0 * L),
                  c / (2.0 * (eta * L + c * c)))
        lam1 = 0.9 * cap  # strict-inequality headroom
        lam2 = (1.0 - lam1 * c) / eta
        lam3 = max(1.0 + lam1 * L, 0.5 * (lam1 + lam2))
        return lam1, lam2, lam3


def scheduled_coefficients(config: UnderdampedConfig,
                           z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-state damping c(z) and learning rate eta(z) of scheduled mode."""
    obj = config.objective
    z = np.atleast_2d(np.asarray(z, dtype=float))
    hnorm = np.array([np.linalg.norm(obj.hessian_at(zi), 2) for zi in z])
    c = 0.5 * hnorm + 0.5
    h = np.asarray(obj.value(z), dtype=float) - obj.optimum_value
    eta = 0.5 * (config.phi.phi2_prime(h) - c)
    return c, eta


def build_underdamped(config: UnderdampedConfig) -> DiffusionModel:
    obj = config.objective
    n = obj.dim

    if config.mode == "constant_coeff":
        eta_c, c_c = config.eta, config.c

        def drift(x):
            z, v = x[..., :n], x[..., n:]
            dv = -eta_c * np.asarray(obj.gradient(z)) - c_c * v
            return np.concatenate([v, dv], axis=-1)
    else:
        def drift(x):
            z, v = x[..., :n], x[..., n:]
            c, eta = scheduled_coefficients(config, z)
            dv = -eta[:, None] * np.asarray(obj.gradient(z)) - c[:, None] * v
            return np.concatenate([v, dv], axis=-1)

    if config.G is None:
        block = np.vstack([np.zeros((n, n)), np.eye(n)])

        def diffusion(x):
            return np.broadcast_to(block, (x.shape[0], 2 * n, n))
    else:
        def diffusion(x):
            z, v = x[..., :n], x[..., n:]
            gv = np.asarray(config.G(np.concatenate([z, v], axis=-1)))
            out = np.zeros((x.shape[0], 2 * n, n))
            out[:, n:, :] = gv
            return out

    domain = None
    if obj.domain_test is not None:
        domain = lambda x: np.asarray(obj.domain_test(x[..., :n]), dtype=bool)

    eq = None
    if obj.minimizer is not None:
        eq = np.concatenate([obj.minimizer, np.zeros(n)])
    return DiffusionModel(state_dim=2 * n, noise_dim=n, drift=drift,
                          diffusion=diffusion, domain_test=domain,
                          equilibrium=eq,
                          label=f"underdamped[{obj.label},{config.mode}]")


@dataclass(frozen=True)
class SmoothnessLadder:
    """Sublevel-set smoothness tables.

    Lbar2(h) bounds the Hessian norm over the suboptimality-h sublevel
    set, tabulated by radial sampling (an under-estimate, so downstream
    inequalities are re-verified by certificate falsification).  Lbar
    folds in the diffusion-field bound: Lbar(h) = Lbar2(h) * K_G^2 / 2.
    """

    h_table: np.ndarray
    lbar2_table: np.ndarray
    k_g: float

    def Lbar2(self, h) -> np.ndarray:
        return np.interp(np.asarray(h, dtype=float), self.h_table,
                         self.lbar2_table)

    def Lbar(self, h) -> np.ndarray:
        return 0.5 * self.Lbar2(h) * self.k_g**2

    def Ltilde(self, h) -> np.ndarray:
        return self.Lbar(h) - self.Lbar(0.0)

    @property
    def h_max(self) -> float:
        return float(self.h_table[-1])


def build_smoothness_ladder(objective: Objective, h_max: float,
                            k_g: float | None = None, n_dirs: int = 40,
                            pts_per_dir: int = 25, seed: int = 0,
                            grid_points: int = 200) -> SmoothnessLadder:
    """Tabulate the sublevel Hessian-norm bound by radial sampling.

    Along each random unit direction from the minimizer, states are placed
    up to the radius where suboptimality reaches h_max (grown by doubling,
    capped), and their (suboptimality, Hessian norm) pairs feed a running
    maximum over the h grid.
    """
    if objective.minimizer is None:
        raise ValueError("ladder tabulation needs the objective minimizer")
    zstar = np.asarray(objective.minimizer, dtype=float)
    rng = np.random.Generator(np.random.Philox(key=seed))
    subopts, hnorms = [0.0], [np.linalg.norm(objective.hessian_at(zstar), 2)]
    for _ in range(n_dirs):
        d = rng.standard_normal(zstar.size)
        d /= np.linalg.norm(d)
        r_hi = 1.0
        for _ in range(200):
            if objective.value_at(zstar + r_hi * d) - objective.optimum_value >= h_max:
                break
            r_hi *= 2.0
            if r_hi > 1e12:
                break
        for frac in np.linspace(1.0 / pts_per_dir, 1.0, pts_per_dir):
            z = zstar + frac * r_hi * d
            h = objective.value_at(z) - objective.optimum_value
            if h > h_max:
                continue
            subopts.append(h)
            hnorms.append(np.linalg.norm(objective.hessian_at(z), 2))
    order = np.argsort(subopts)
    subopts = np.asarray(subopts)[order]
    hnorms = np.maximum.accumulate(np.asarray(hnorms)[order])
    h_table = np.linspace(0.0, h_max, grid_points)
    lbar2 = np.interp(h_table, subopts, hnorms)
    lbar2 = np.maximum.accumulate(lbar2)
    if k_g is None:
        k_g = float(np.sqrt(objective.dim))
    return SmoothnessLadder(h_table=h_table, lbar2_table=lbar2, k_g=k_g)


def ladder_from_profile(profile, problem, h_max: float, k_g: float,
                        grid_points: int = 200) -> SmoothnessLadder:
    """Ladder backed by the analytic LQR smoothness profile.

    The gradient Lipschitz constant over a sublevel set bounds the Hessian
    norm there, so the closed form replaces sampling.
    """
    from .lqr import smoothness_profile_L3
    h_table = np.linspace(0.0, h_max, grid_points)
    lbar2 = np.asarray(smoothness_profile_L3(profile, problem, h_table))
    return SmoothnessLadder(h_table=h_table, lbar2_table=lbar2, k_g=k_g)


def m1_profile(ladder: SmoothnessLadder, eta: Callable, mu: Callable,
               h_grid: np.ndarray) -> np.ndarray:
    """Grid values of m1(h) = inf over r >= h of eta(r) mu(r)^2 / Ltilde(r)."""
    h_grid = np.asarray(h_grid, dtype=float)
    lt = np.asarray(ladder.Ltilde(h_grid), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.asarray(eta(h_grid), dtype=float) \
            * np.asarray(mu(h_grid), dtype=float) ** 2 / lt
    vals = np.where(lt > 0, vals, np.inf)
    return np.minimum.accumulate(vals[::-1])[::-1]


@dataclass(frozen=True)
class PhiLadder:
    """Smoothed gradient-bound ladder.

    phi1(h) = 2 Lbar2(h) h + 5/2 h satisfies |grad J|^2 <= phi1(J - J*);
    phi2 is its forward moving average of width delta, with derivative
    phi2'(h) = (phi1(h+delta) - phi1(h))/delta >= 2 Lbar2(h) + 5/2.  Note
    phi2(0) > 0: the smoothing shifts the value at zero, so phi2 is not a
    class function and is exposed as a plain table-backed callable, as is
    its clamped inverse (arguments below phi2(0) map to 0).
    """

    phi1: ScalarClassFunction
    delta: float
    h_fine: np.ndarray = field(repr=False)
    phi1_vals: np.ndarray = field(repr=False)
    phi2_vals: np.ndarray = field(repr=False)
    phi2p_vals: np.ndarray = field(repr=False)
    avg_fn: Callable = field(repr=False, default=None)
    h_max: float = 0.0

    def phi2(self, h) -> np.ndarray:
        h = np.minimum(np.asarray(h, dtype=float), self.h_max)
        if self.avg_fn is not None:
            return self.avg_fn(h)
        return np.interp(h, self.h_fine, self.phi2_vals)

    def phi2_prime(self, h) -> np.ndarray:
        h = np.minimum(np.asarray(h, dtype=float), self.h_max)
        return (np.interp(h + self.delta, self.h_fine, self.phi1_vals)
                - np.interp(h, self.h_fine, self.phi1_vals)) / self.delta

    def phi2_inverse(self, y) -> np.ndarray:
        # restrict to the strictly increasing portion (h <= h_max); the
        # table saturates past it
        cut = np.searchsorted(self.h_fine, self.h_max, side="right")
        return np.interp(np.asarray(y, dtype=float), self.phi2_vals[:cut],
                         self.h_fine[:cut])


def phi_functions(ladder: SmoothnessLadder, delta: float | None = None,
                  grid_points: int = 2000) -> PhiLadder:
    """Build the phi ladder from a smoothness ladder.

    delta defaults to 1e-2 * (1 + h_max): small enough that phi2 tracks
    phi1, large enough that the difference quotient is well conditioned.
    """
    h_max = ladder.h_max
    if delta is None:
        delta = 1e-2 * (1.0 + h_max)
    if delta <= 0:
        raise ValueError("delta must be positive")
    h_fine = np.linspace(0.0, h_max + delta, grid_points)
    if h_fine[-1] > ladder.h_table[-1] + delta + 1e-12:
        raise ValueError("ladder grid does not cover h_max + delta")
    lbar2 = np.asarray(ladder.Lbar2(h_fine), dtype=float)
    phi1_vals = 2.0 * lbar2 * h_fine + 2.5 * h_fine
    big_phi = cumulative_trapezoid(phi1_vals, h_fine, initial=0.0)
    step = h_fine[1] - h_fine[0]

    def antiderivative(h):
        # exact integral of the piecewise-linear phi1 table, so the moving
        # average stays accurate even when delta is far below the grid step
        h = np.clip(np.asarray(h, dtype=float), 0.0, h_fine[-1])
        i = np.clip((h // step).astype(int), 0, h_fine.size - 2)
        dh = h - h_fine[i]
        slope = (phi1_vals[i + 1] - phi1_vals[i]) / step
        return big_phi[i] + phi1_vals[i] * dh + 0.5 * slope * dh * dh

    def avg(h):
        return (antiderivative(h + delta) - antiderivative(h)) / delta

    phi2_vals = avg(np.minimum(h_fine, h_max))
    # clamp beyond h_max where the table ends; values there are only used
    # by the inverse, which never queries past phi2(h_max)
    phi1_fn = ScalarClassFunction(
        eval=lambda h: np.interp(np.asarray(h, dtype=float), h_fine, phi1_vals),
        declared_class=KINF, description="2 Lbar2(h) h + 5/2 h")
    phi2p_vals = (np.interp(np.minimum(h_fine, h_max) + delta, h_fine, phi1_vals)
                  - np.interp(np.minimum(h_fine, h_max), h_fine, phi1_vals)) / delta
    return PhiLadder(phi1=phi1_fn, delta=delta, h_fine=h_fine,
                     phi1_vals=phi1_vals, phi2_vals=phi2_vals,
                     phi2p_vals=phi2p_vals, avg_fn=avg, h_max=h_max)


def v2_lyapunov(config: UnderdampedConfig, z, v) -> float:
    """Mixed candidate J - J* + lambda1 <v, grad J> + lambda2/2 <v, v>."""
    lam1, lam2, _ = config.lambdas
    obj = config.objective
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(obj.value_at(z) - obj.optimum_value
                 + lam1 * v @ obj.gradient_at(z) + 0.5 * lam2 * v @ v)


def v3_lyapunov(config: UnderdampedConfig, phi: PhiLadder, z, v) -> float:
    """Smoothed-potential candidate phi2(J - J*) + <grad J, v> + <v, v>."""
    obj = config.objective
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    h = obj.value_at(z) - obj.optimum_value
    return float(phi.phi2(h) + obj.gradient_at(z) @ v + v @ v)


def objective_size_function(obj: Objective) -> SizeFunction:
    """V = J - J* with the objective's own derivatives."""
    return SizeFunction(
        value=lambda z: np.asarray(obj.value(z), dtype=float) - obj.optimum_value,
        gradient=lambda z: obj.gradient_at(z),
        hessian=lambda z: obj.hessian_at(z),
        label=f"suboptimality[{obj.label}]")


def half_norm_squared(center=None) -> SizeFunction:
    """V(x) = 1/2 |x - center|^2."""
    def value(x):
        x = np.asarray(x, dtype=float)
        d = x if center is None else x - np.asarray(center, dtype=float)
        return 0.5 * np.sum(d * d, axis=-1)

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return x if center is None else x - np.asarray(center, dtype=float)

    return SizeFunction(value=value, gradient=gradient,
                        hessian=lambda x: np.eye(np.asarray(x).shape[-1]),
                        label="half-norm-squared")


def _third_derivative_contraction(obj: Objective, z: np.ndarray,
                                  v: np.ndarray) -> np.ndarray:
    """d/dz of (hess J(z) v) by central differences along v."""
    vn = np.linalg.norm(v)
    if vn == 0.0:
        return np.zeros((z.size, z.size))
    eps = 1e-5 * (1.0 + np.linalg.norm(z)) / vn
    return (obj.hessian_at(z + eps * v) - obj.hessian_at(z - eps * v)) / (2.0 * eps)


def v2_size_function(config: UnderdampedConfig) -> SizeFunction:
    obj = config.objective
    lam1, lam2, _ = config.lambdas
    n = obj.dim

    def value(x):
        x = np.asarray(x, dtype=float)
        z, v = x[..., :n], x[..., n:]
        h = np.asarray(obj.value(z), dtype=float) - obj.optimum_value
        grads = np.asarray(obj.gradient(np.atleast_2d(z)))
        cross = np.sum(np.atleast_2d(v) * grads, axis=-1)
        kin = 0.5 * np.sum(v * v, axis=-1)
        out = h + lam1 * cross.reshape(np.shape(h)) + lam2 * kin
        return out

    def gradient(x):
        z, v = x[:n], x[n:]
        g = obj.gradient_at(z)
        H = obj.hessian_at(z)
        return np.concatenate([g + lam1 * H @ v, lam1 * g + lam2 * v])

    def hessian(x):
        z, v = x[:n], x[n:]
        H = obj.hessian_at(z)
        zz = H + lam1 * _third_derivative_contraction(obj, z, v)
        top = np.hstack([zz, lam1 * H])
        bot = np.hstack([lam1 * H, lam2 * np.eye(n)])
        return np.vstack([top, bot])

    return SizeFunction(value=value, gradient=gradient, hessian=hessian,
                        label=f"V2[{obj.label}]")


def v3_size_function(config: UnderdampedConfig,
                     phi: PhiLadder | None = None) -> SizeFunction:
    obj = config.objective
    phi = phi if phi is not None else config.phi
    if phi is None:
        raise ValueError("v3 needs a PhiLadder")
    n = obj.dim
    # tabulated second derivative of phi2 for the zz Hessian block; the
    # noise block of the generator never touches it
    p2pp = np.gradient(phi.phi2p_vals, phi.h_fine)

    def value(x):
        x = np.asarray(x, dtype=float)
        z, v = x[..., :n], x[..., n:]
        h = np.asarray(obj.value(z), dtype=float) - obj.optimum_value
        grads = np.asarray(obj.gradient(np.atleast_2d(z)))
        cross = np.sum(np.atleast_2d(v) * grads, axis=-1)
        kin = np.sum(v * v, axis=-1)
        return phi.phi2(h) + cross.reshape(np.shape(h)) + kin

    def gradient(x):
        z, v = x[:n], x[n:]
        g = obj.gradient_at(z)
        H = obj.hessian_at(z)
        h = obj.value_at(z) - obj.optimum_value
        return np.concatenate([float(phi.phi2_prime(h)) * g + H @ v,
                               g + 2.0 * v])

    def hessian(x):
        z, v = x[:n], x[n:]
        g = obj.gradient_at(z)
        H = obj.hessian_at(z)
        h = obj.value_at(z) - obj.optimum_value
        p2p = float(phi.phi2_prime(h))
        p2dd = float(np.interp(h, phi.h_fine, p2pp))
        zz = p2dd * np.outer(g, g) + p2p * H \
            + _third_derivative_contraction(obj, z, v)
        top = np.hstack([zz, H])
        bot = np.hstack([H, 2.0 * np.eye(n)])
        return np.vstack([top, bot])

    return SizeFunction(value=value, gradient=gradient, hessian=hessian,
                        label=f"V3[{obj.label}]")


def _square_envelope(mu: ScalarClassFunction) -> ScalarClassFunction:
    return ScalarClassFunction(
        eval=lambda r: np.square(np.asarray(mu.eval(r), dtype=float)),
        declared_class=mu.declared_class,
        description=f"({mu.description})^2")


def overdamped_certificate(config: OverdampedConfig,
                           cap: float = np.inf) -> DissipationCertificate:
    """Triple for V = J - J*: alpha(r) = mu(r)^2, gamma(s) = L K_G^2 s / 2.

    With an unbounded PL modulus this is an NSS certificate; a bounded
    modulus downgrades it to scNSS with covariance cap ``cap``.
    """
    obj = config.objective
    if obj.envelope is None:
        raise ValueError("objective has no PL envelope")
    if obj.global_lipschitz is None:
        raise ValueError("certificate needs the global Lipschitz constant")
    mu = obj.envelope.mu
    alpha = _square_envelope(mu)
    coef = 0.5 * obj.global_lipschitz * config.k_g**2
    if alpha.declared_class == KINF:
        gamma = ScalarClassFunction(
            lambda s: coef * np.asarray(s, dtype=float), K,
            description=f"{coef:g} s")
        return DissipationCertificate(alpha=alpha, gamma=gamma, kind="NSS")
    if not np.isfinite(cap):
        raise ValueError("bounded PL modulus: supply a finite covariance cap")
    from .compfun import K_ON_0_D
    gamma = ScalarClassFunction(
        lambda s: coef * np.asarray(s, dtype=float), K_ON_0_D, d=cap,
        description=f"{coef:g} s on [0, {cap:g})")
    return DissipationCertificate(alpha=alpha, gamma=gamma, kind="scNSS",
                                  d=cap)


def v2_certificate(config: UnderdampedConfig) -> DissipationCertificate:
    """Triple for V2: alpha(r) = lambda1 eta mu1(r / (2 lambda3)) with
    mu1(h) = min{mu(h)^2, c h / (2 lambda1 eta^2)}, and
    gamma(s) = lambda2 K_G^2 s / 2."""
    obj = config.objective
    if obj.envelope is None:
        raise ValueError("objective has no PL envelope")
    lam1, lam2, lam3 = config.lambdas
    eta, c = config.eta, config.c
    mu = obj.envelope.mu
    slope = c / (2.0 * lam1 * eta * eta)

    def alpha_eval(r):
        h = np.asarray(r, dtype=float) / (2.0 * lam3)
        mu1 = np.minimum(np.square(np.asarray(mu.eval(h), dtype=float)),
                         slope * h)
        return lam1 * eta * mu1

    alpha = ScalarClassFunction(alpha_eval, mu.declared_class,
                                description="lam1 eta mu1(r / (2 lam3))")
    coef = 0.5 * lam2 * config.k_g**2
    gamma = ScalarClassFunction(lambda s: coef * np.asarray(s, dtype=float), K,
                                description=f"{coef:g} s")
    kind = "NSS" if mu.declared_class == KINF else "iNSS"
    return DissipationCertificate(alpha=alpha, gamma=gamma, kind=kind)


def v3_certificate(config: UnderdampedConfig,
                   phi: PhiLadder | None = None) -> DissipationCertificate:
    """Triple for V3: alpha(r) = mu3(r/3) with
    mu3(h) = min{mu(phi2^-1(h))^2, h}, gamma(s) = K_G^2 s.

    The clamped inverse zeroes mu3 below phi2(0); V3 itself never drops
    below phi2(0)/2, and shrinking alpha only weakens the certified decay,
    so the flat segment is conservative.
    """
    obj = config.objective
    if obj.envelope is None:
        raise ValueError("objective has no PL envelope")
    phi = phi if phi is not None else config.phi
    if phi is None:
        raise ValueError("v3 certificate needs a PhiLadder")
    mu = obj.envelope.mu

    def alpha_eval(r):
        h = np.asarray(r, dtype=float) / 3.0
        inv = phi.phi2_inverse(h)
        mu3 = np.minimum(np.square(np.asarray(mu.eval(inv), dtype=float)), h)
        return mu3

    alpha = ScalarClassFunction(alpha_eval, mu.declared_class,
                                description="mu3(r/3)")
    coef = config.k_g**2
    gamma = ScalarClassFunction(lambda s: coef * np.asarray(s, dtype=float), K,
                                description=f"{coef:g} s")
    kind = "NSS" if mu.declared_class == KINF else "iNSS"
    return DissipationCertificate(alpha=alpha, gamma=gamma, kind=kind)


def generator_bound_overdamped(config: OverdampedConfig, z, sigma_mat,
                               ladder: SmoothnessLadder | None = None
                               ) -> tuple[float, float]:
    """Exact generator of J versus its dissipation bound at (z, Sigma).

    Constant learning rate: bound -mu(h)^2 + L K_G^2 |Sigma Sigma^T| / 2.
    Scheduled learning rate: bound -eta(h) mu(h)^2
    + (Lbar(0) + Ltilde(h)) |Sigma Sigma^T|, which needs a ladder.
    """
    obj = config.objective
    if obj.envelope is None:
        raise ValueError("objective has no PL envelope")
    z = np.asarray(z, dtype=float)
    sigma_mat = np.atleast_2d(np.asarray(sigma_mat, dtype=float))
    h = obj.value_at(z) - obj.optimum_value
    g = obj.gradient_at(z)
    H = obj.hessian_at(z)
    Gz = np.eye(obj.dim) if config.G is None \
        else np.asarray(config.G(z[None]))[0]
    eta_h = 1.0 if config.eta is None else float(config.eta(np.asarray([h]))[0])
    gs = Gz @ sigma_mat
    lhs = -eta_h * float(g @ g) + 0.5 * float(np.trace(gs.T @ H @ gs))
    s = float(np.linalg.norm(sigma_mat @ sigma_mat.T, 2))
    mu_h = float(obj.envelope.mu(h))
    if config.eta is None:
        if obj.global_lipschitz is None:
            raise ValueError("constant-rate bound needs the Lipschitz constant")
        rhs = -mu_h**2 + 0.5 * obj.global_lipschitz * config.k_g**2 * s
    else:
        if ladder is None:
            raise ValueError("scheduled-rate bound needs a smoothness ladder")
        rhs = -eta_h * mu_h**2 + float(ladder.Lbar(0.0) + ladder.Ltilde(h)) * s
    return lhs, rhs
