"""Infinitesimal-generator evaluation and sampling-based Lyapunov
dissipation certificates.

The generator of a diffusion dx = f(x) dt + g(x) Theta dB acting on a size
function V is

    L[V](xi, Theta) = <grad V(xi), f(xi)>
                      + 1/2 trace(Theta^T g(xi)^T hess V(xi) g(xi) Theta).

Certification is falsification on samples, never proof: check_dissipation
searches for (state, Theta) pairs violating

    L[V](xi, Theta) <= -alpha(V(xi)) + gamma(|Theta Theta^T|)

and records witnesses.  An empty violation list means "no counterexample
found on the samples", nothing stronger.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .compfun import (K, K_ON_0_D, KINF, PD, DomainViolation,
                      ScalarClassFunction, invert, invert_auto)
from .sde import DiffusionModel, TrajectoryEnsemble, TrajectoryPath


class NumericalError(RuntimeError):
    """Non-finite value met during a finite-difference probe."""


class AdmissibilityError(ValueError):
    """Noise intensity too large for a small-covariance certificate."""


@dataclass(frozen=True)
class SizeFunction:
    """Positive definite coercive scalar of the state with derivatives.

    ``value`` must be vectorized over leading axes; ``gradient`` and
    ``hessian`` take one state and default to central differences with
    step 1e-5 * (1 + |xi|).
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    hessian: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = ""

    def value_at(self, xi) -> float:
        return float(np.asarray(self.value(np.asarray(xi, dtype=float))))

    def _fd_step(self, xi: np.ndarray) -> float:
        return 1e-5 * (1.0 + float(np.linalg.norm(xi)))

    def gradient_at(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.gradient is not None:
            return np.asarray(self.gradient(xi), dtype=float)
        h = self._fd_step(xi)
        n = xi.size
        probes = np.repeat(xi[None], 2 * n, axis=0)
        probes[:n] += h * np.eye(n)
        probes[n:] -= h * np.eye(n)
        vals = np.asarray(self.value(probes), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NumericalError(f"non-finite probe near {xi!r}")
        return (vals[:n] - vals[n:]) / (2.0 * h)

    def hessian_at(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.hessian is not None:
            return np.asarray(self.hessian(xi), dtype=float)
        h = self._fd_step(xi)
        n = xi.size
        eye = np.eye(n)
        H = np.empty((n, n))
        v0 = self.value_at(xi)
        for i in range(n):
            for j in range(i, n):
                if i == j:
                    vp = self.value_at(xi + h * eye[i])
                    vm = self.value_at(xi - h * eye[i])
                    H[i, i] = (vp - 2.0 * v0 + vm) / h**2
                else:
                    vpp = self.value_at(xi + h * (eye[i] + eye[j]))
                    vpm = self.value_at(xi + h * (eye[i] - eye[j]))
                    vmp = self.value_at(xi - h * (eye[i] - eye[j]))
                    vmm = self.value_at(xi - h * (eye[i] + eye[j]))
                    H[i, j] = H[j, i] = (vpp - vpm - vmp + vmm) / (4.0 * h**2)
        if not np.all(np.isfinite(H)):
            raise NumericalError(f"non-finite Hessian probe near {xi!r}")
        return H

    def without_derivatives(self) -> "SizeFunction":
        """Finite-difference-only copy, for derivative cross-checks."""
        return SizeFunction(value=self.value, label=self.label + " (fd)")


_KIND_CLASSES = {
    # kind -> (required alpha class set, required gamma class set)
    "NSS": ({KINF}, {K, KINF}),
    "scNSS": ({K, KINF}, {K_ON_0_D}),
    "iNSS": ({PD, K, KINF}, {K, KINF}),
}


@dataclass
class DissipationCertificate:
    """A dissipation-rate pair (alpha, gamma) of a declared stability kind.

    ``d`` caps the admissible noise covariance norm for the scNSS kind.
    ``violations`` holds (state, Theta, lhs, rhs) witnesses found by
    check_dissipation; it is empty for a freshly declared certificate.
    """

    alpha: ScalarClassFunction
    gamma: ScalarClassFunction
    kind: str
    d: float = np.inf
    violations: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in _KIND_CLASSES:
            raise ValueError(f"unknown certificate kind {self.kind!r}")
        alpha_ok, gamma_ok = _KIND_CLASSES[self.kind]
        if self.alpha.declared_class not in alpha_ok:
            raise ValueError(f"{self.kind} needs alpha in {sorted(alpha_ok)}, "
                             f"got {self.alpha.declared_class}")
        if self.gamma.declared_class not in gamma_ok:
            raise ValueError(f"{self.kind} needs gamma in {sorted(gamma_ok)}, "
                             f"got {self.gamma.declared_class}")
        if self.kind == "scNSS" and not np.isfinite(self.d):
            raise ValueError("scNSS certificate needs a finite covariance cap d")


def generator_apply(V: SizeFunction, model: DiffusionModel, xi,
                    Theta: np.ndarray) -> float:
    """Generator of the model's diffusion with noise transform Theta at xi."""
    xi = np.asarray(xi, dtype=float)
    Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    if Theta.shape != (model.noise_dim, model.noise_dim):
        raise ValueError(f"Theta must be {model.noise_dim}x{model.noise_dim}")
    grad = V.gradient_at(xi)
    drift_term = float(grad @ model.drift_at(xi))
    if not np.any(Theta):
        return drift_term
    g = model.diffusion_at(xi)
    H = V.hessian_at(xi)
    gt = g @ Theta
    noise_term = 0.5 * float(np.trace(gt.T @ H @ gt))
    return drift_term + noise_term


def default_state_samples(equilibrium, count: int = 1000,
                          scales: Sequence[float] = (0.1, 1.0, 10.0),
                          seed: int = 0,
                          extremes: Sequence | None = None) -> np.ndarray:
    """Gaussian clouds around the equilibrium at several scales.

    Covers near-equilibrium, moderate, and coercive regimes; callers append
    extremes of their own.
    """
    eq = np.asarray(equilibrium, dtype=float).reshape(-1)
    rng = np.random.Generator(np.random.Philox(key=seed))
    per = count // len(scales)
    blocks = [eq + s * rng.standard_normal((per, eq.size)) for s in scales]
    if extremes is not None:
        blocks.append(np.atleast_2d(np.asarray(extremes, dtype=float)))
    return np.concatenate(blocks, axis=0)


def default_theta_samples(m: int, cap: float = np.inf,
                          count: int = 10) -> list[np.ndarray]:
    """Isotropic noise transforms sigma*I at a geometric intensity ladder.

    Intensities |Theta Theta^T| = sigma^2 run from 1e-3 to 10, truncated
    below a finite cap with 10% headroom.
    """
    top = 10.0 if not np.isfinite(cap) else 0.9 * cap
    intensities = np.geomspace(1e-3, top, count)
    return [np.sqrt(s) * np.eye(m) for s in intensities]


def check_dissipation(V: SizeFunction, model: DiffusionModel,
                      cert: DissipationCertificate, states, thetas,
                      tol: float = 1e-8) -> DissipationCertificate:
    """Search (state, Theta) samples for dissipation violations.

    A pair is a violation when lhs > rhs + tol*(1 + |rhs|).  Returns a copy
    of the certificate with the witness list filled, sorted by excess.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    violations = []
    for Theta in thetas:
        Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
        s = float(np.linalg.norm(Theta @ Theta.T, 2))
        if cert.kind == "scNSS" and s >= cert.d:
            raise DomainViolation(
                f"Theta intensity {s:g} >= scNSS cap d={cert.d:g}")
        gam = float(cert.gamma(s))
        for xi in states:
            lhs = generator_apply(V, model, xi, Theta)
            rhs = -float(cert.alpha(V.value_at(xi))) + gam
            if lhs > rhs + tol * (1.0 + abs(rhs)):
                violations.append((xi.copy(), Theta.copy(), lhs, rhs))
    violations.sort(key=lambda w: (w[3] - w[2], tuple(w[0])))
    return replace(cert, violations=violations)


@dataclass(frozen=True)
class SetDLevel:
    """Sublevel threshold defining the recurrence set, plus the scNSS
    admissibility bound d1 on the noise intensity."""

    level: float
    d1: float


def set_D_threshold(alpha: ScalarClassFunction, gamma: ScalarClassFunction,
                    c: float, sup_intensity: float, bracket: float = 1e6,
                    small_covariance: bool = False) -> SetDLevel:
    """Level alpha^-1(c * gamma(sup_intensity)) of the recurrence set.

    ``bracket`` bounds the inversion search and, for bounded alpha, the
    range sup used in d1 = gamma^-1(sup alpha / c).  With
    ``small_covariance`` set, intensities at or above d1 raise
    :class:`AdmissibilityError`.
    """
    if c <= 1:
        raise ValueError("require c > 1")
    if sup_intensity < 0:
        raise ValueError("sup_intensity must be nonnegative")
    sup_alpha = float(alpha.eval(bracket))
    try:
        d1 = invert_auto(gamma, sup_alpha / c)
    except Exception:
        d1 = np.inf  # gamma saturates below sup_alpha/c: no cap active
    if small_covariance and sup_intensity >= d1:
        raise AdmissibilityError(
            f"sup intensity {sup_intensity:g} >= admissible d1 = {d1:g}")
    if sup_intensity == 0.0:
        return SetDLevel(level=0.0, d1=d1)
    target = c * float(gamma(sup_intensity))
    level = invert(alpha, target, bracket)
    return SetDLevel(level=level, d1=d1)


def entry_exit_times(path: TrajectoryPath, V: SizeFunction,
                     threshold: float) -> list[tuple[int, int | None]]:
    """Alternating grid indices where V(state) enters (<=) and exits (>)
    the threshold sublevel set.  An interval open at the end of the path
    has exit index None.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    vals = np.asarray(self_values(V, path.states))
    inside = vals <= threshold
    intervals = []
    enter = None
    for i, flag in enumerate(inside):
        if flag and enter is None:
            enter = i
        elif not flag and enter is not None:
            intervals.append((enter, i))
            enter = None
    if enter is not None:
        intervals.append((enter, None))
    return intervals


def self_values(V: SizeFunction, states: np.ndarray) -> np.ndarray:
    """V over an array of states with any leading shape."""
    return np.asarray(V.value(np.asarray(states, dtype=float)), dtype=float)


@dataclass(frozen=True)
class SupermartingaleReport:
    """Mean-drift diagnostic of V along ensemble segments outside the
    recurrence set.  ``flags`` lists recorded-step indices where the mean
    of V over outside paths increased by more than two Monte Carlo
    standard errors; ``low_power`` lists steps with too few outside paths
    to test."""

    times: np.ndarray
    outside_counts: np.ndarray
    mean_outside: np.ndarray
    flags: list
    low_power: list

    @property
    def clean(self) -> bool:
        return not self.flags


def supermartingale_diagnostic(ensemble: TrajectoryEnsemble, V: SizeFunction,
                               threshold: float,
                               min_population: int = 10) -> SupermartingaleReport:
    if ensemble.n_paths < 1:
        raise ValueError("empty ensemble")
    vals = self_values(V, ensemble.states)  # (N, R)
    R = vals.shape[1]
    # mask out recorded entries at or past each path's exit
    alive = np.arange(R)[None, :] < ensemble.valid_counts[:, None]
    flags, low_power = [], []
    counts = np.zeros(R - 1, dtype=int)
    means = np.full(R - 1, np.nan)
    for i in range(R - 1):
        mask = alive[:, i] & alive[:, i + 1] & (vals[:, i] > threshold)
        counts[i] = mask.sum()
        if counts[i] == 0:
            low_power.append(i)
            continue
        d = vals[mask, i + 1] - vals[mask, i]
        means[i] = vals[mask, i].mean()
        if counts[i] < min_population:
            low_power.append(i)
            continue
        se = d.std(ddof=1) / np.sqrt(counts[i]) if counts[i] > 1 else np.inf
        if d.mean() > 2.0 * se:
            flags.append(i)
    return SupermartingaleReport(times=ensemble.times[:-1],
                                 outside_counts=counts, mean_outside=means,
                                 flags=flags, low_power=low_power)


def certificate_to_csv(cert: DissipationCertificate, path: str) -> None:
    """Violation witnesses as CSV plus a trailing summary comment line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "theta_intensity", "lhs", "rhs"])
        for xi, Theta, lhs, rhs in cert.violations:
            s = float(np.linalg.norm(Theta @ Theta.T, 2))
            writer.writerow([" ".join(format(v, ".17g") for v in xi),
                             format(s, ".17g"), format(lhs, ".17g"),
                             format(rhs, ".17g")])
        fh.write(f"# kind={cert.kind} violations={len(cert.violations)}\n")


def certificate_summary(cert: DissipationCertificate) -> str:
    n = len(cert.violations)
    verdict = ("no counterexample found on samples" if n == 0
               else f"{n} violation(s); worst excess "
                    f"{max(l - r for _, _, l, r in cert.violations):.3e}")
    return (f"dissipation certificate kind={cert.kind} "
            f"alpha[{cert.alpha.declared_class}] gamma[{cert.gamma.declared_class}] "
            f"d={cert.d:g}: {verdict}")
