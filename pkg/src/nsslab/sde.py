"""Euler-Maruyama integration of diffusions with time-varying noise covariance.

All model callables (drift, diffusion, domain test) take arrays with a
leading batch axis: drift maps (B, n) -> (B, n), diffusion maps
(B, n) -> (B, n, m), domain tests map (B, n) -> (B,) booleans.  Single
trajectories are batches of one, so the serial and ensemble code paths are
identical and bit-for-bit reproducible.

Randomness is counter-based: each path owns a Philox generator keyed by a
64-bit seed derived from (master_seed, path index), so a path's increments
are a pure function of its seed and step index, independent of batch size,
chunking, or parallelism.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

BLOWUP_LIMIT = 1e12


@dataclass(frozen=True)
class DiffusionModel:
    """Drift/diffusion pair with state domain and equilibrium.

    ``diffusion=None`` means the identity field (requires n == m), which
    enables a fast path in the integrator.  ``domain_test=None`` means the
    whole space; blow-up detection (component magnitude > 1e12 or
    non-finite) applies regardless.
    """

    state_dim: int
    noise_dim: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray] | None = None
    domain_test: Callable[[np.ndarray], np.ndarray] | None = None
    equilibrium: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        if self.diffusion is None and self.state_dim != self.noise_dim:
            raise ValueError("identity diffusion requires state_dim == noise_dim")
        if self.equilibrium is not None:
            eq = np.asarray(self.equilibrium, dtype=float).reshape(1, -1)
            if eq.shape[1] != self.state_dim:
                raise ValueError("equilibrium dimension mismatch")
            f_eq = np.asarray(self.drift(eq))
            if not np.all(np.abs(f_eq) <= 1e-9):
                raise ValueError(
                    f"drift at equilibrium is not zero: |f| max {np.abs(f_eq).max():g}")
            if self.diffusion is not None:
                g_eq = np.asarray(self.diffusion(eq))
                if g_eq.shape != (1, self.state_dim, self.noise_dim):
                    raise ValueError(f"diffusion output shape {g_eq.shape} != "
                                     f"(1, {self.state_dim}, {self.noise_dim})")

    def drift_at(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.drift(np.asarray(x, dtype=float)[None]))[0]

    def diffusion_at(self, x: np.ndarray) -> np.ndarray:
        if self.diffusion is None:
            return np.eye(self.state_dim)
        return np.asarray(self.diffusion(np.asarray(x, dtype=float)[None]))[0]

    def in_domain(self, x: np.ndarray) -> bool:
        if self.domain_test is None:
            return True
        return bool(np.asarray(self.domain_test(np.asarray(x, dtype=float)[None]))[0])


@dataclass(frozen=True)
class CovarianceSchedule:
    """Time-varying noise transform Sigma(t), an m x m matrix per time."""

    sigma: Callable[[float], np.ndarray]
    horizon: float
    is_constant: bool = False

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        probes = [0.0] if self.is_constant else list(np.linspace(0.0, self.horizon, 5))
        for t in probes:
            s = np.asarray(self.sigma(t), dtype=float)
            if s.ndim != 2 or s.shape[0] != s.shape[1]:
                raise ValueError(f"sigma({t}) is not square")
            cov = s @ s.T
            w = np.linalg.eigvalsh(0.5 * (cov + cov.T))
            if w.min() < -1e-12:
                raise ValueError(f"sigma({t}) sigma^T has eigenvalue {w.min():g} < -1e-12")

    @classmethod
    def constant(cls, mat, horizon: float) -> "CovarianceSchedule":
        mat = np.atleast_2d(np.asarray(mat, dtype=float))
        return cls(sigma=lambda t: mat, horizon=horizon, is_constant=True)

    def instantaneous_intensity(self, t: float) -> float:
        s = np.asarray(self.sigma(t), dtype=float)
        return float(np.linalg.norm(s @ s.T, 2))


def sup_noise_intensity(schedule: CovarianceSchedule, t_lo: float, t_hi: float,
                        grid_points: int = 1000) -> float:
    """Max spectral norm of Sigma(t) Sigma(t)^T over a uniform grid.

    A lower bound of the true essential supremum; exact for constant and
    adequate for piecewise-continuous schedules.
    """
    if t_lo > t_hi:
        raise ValueError("t_lo must be <= t_hi")
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    if schedule.is_constant:
        return schedule.instantaneous_intensity(t_lo)
    return max(schedule.instantaneous_intensity(t)
               for t in np.linspace(t_lo, t_hi, grid_points))


@dataclass(frozen=True)
class TrajectoryPath:
    """One sampled path on a recorded time grid.

    ``exited_domain`` covers both boundary exits and blow-ups; ``blowup``
    distinguishes the two.  ``exit_step`` is the full-resolution step index
    of the first invalid state (recorded states are all valid).
    """

    times: np.ndarray
    states: np.ndarray
    seed: int
    exited_domain: bool = False
    blowup: bool = False
    exit_step: int | None = None


@dataclass(frozen=True)
class TrajectoryEnsemble:
    """N paths stored densely: states has shape (N, R, n) on a shared grid.

    Entries at or past a path's exit hold the last valid state; use
    ``valid_counts`` (number of valid recorded entries per path) or the
    ``paths`` property to mask them.
    """

    times: np.ndarray
    states: np.ndarray
    seeds: np.ndarray
    valid_counts: np.ndarray
    exited: np.ndarray
    blowup: np.ndarray
    exit_steps: np.ndarray
    master_seed: int
    dt: float
    model_label: str = ""

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @cached_property
    def paths(self) -> list[TrajectoryPath]:
        out = []
        for k in range(self.n_paths):
            c = int(self.valid_counts[k])
            out.append(TrajectoryPath(
                times=self.times[:c], states=self.states[k, :c],
                seed=int(self.seeds[k]), exited_domain=bool(self.exited[k]),
                blowup=bool(self.blowup[k]),
                exit_step=int(self.exit_steps[k]) if self.exited[k] else None))
        return out


def derive_path_seed(master_seed: int, index: int) -> int:
    """Deterministic 64-bit per-path seed from (master_seed, path index)."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _simulate_batch(model: DiffusionModel, schedule: CovarianceSchedule,
                    x0s: np.ndarray, dt: float, T: float,
                    seeds: Sequence[int], store_every: int):
    n, m = model.state_dim, model.noise_dim
    B = x0s.shape[0]
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * max(1.0, T):
        nsteps = int(math.ceil(T / dt - 1e-12))

    rec_steps = list(range(0, nsteps + 1, store_every))
    if rec_steps[-1] != nsteps:
        rec_steps.append(nsteps)
    rec_lookup = {s: i for i, s in enumerate(rec_steps)}
    R = len(rec_steps)

    states = np.empty((R, B, n))
    gens = [np.random.Generator(np.random.Philox(key=int(s) & (2**64 - 1)))
            for s in seeds]

    z = np.array(x0s, dtype=float)
    states[0] = z
    active = np.ones(B, dtype=bool)
    exited = np.zeros(B, dtype=bool)
    blowup = np.zeros(B, dtype=bool)
    exit_steps = np.full(B, -1, dtype=np.int64)
    valid_counts = np.ones(B, dtype=np.int64)

    sqdt = math.sqrt(dt)
    sig_const = None
    if schedule.is_constant:
        sig_const = np.asarray(schedule.sigma(0.0), dtype=float) * sqdt

    identity_g = model.diffusion is None
    chunk = max(64, min(nsteps, (1 << 24) // max(B * m, 1)))
    buf = np.empty((B, chunk, m))

    step = 0
    while step < nsteps:
        c = min(chunk, nsteps - step)
        for k in range(B):
            if active[k] or True:  # keep streams aligned with per-path runs
                buf[k, :c] = gens[k].standard_normal((c, m))
        for j in range(c):
            t = step * dt
            sig = sig_const if sig_const is not None else \
                np.asarray(schedule.sigma(t), dtype=float) * sqdt
            w = buf[:, j, :] @ sig.T
            if identity_g:
                noise = w
            else:
                g = np.asarray(model.diffusion(z))
                noise = np.einsum("bnm,bm->bn", g, w)
            z_new = z + model.drift(z) * dt + noise
            step += 1

            # validity of the proposed states for currently active paths
            mags = np.max(np.abs(z_new), axis=1)
            blown = ~(mags <= BLOWUP_LIMIT)  # catches NaN/inf as well
            bad = blown.copy()
            if model.domain_test is not None:
                bad |= ~np.asarray(model.domain_test(z_new), dtype=bool)
            newly_dead = active & bad
            if newly_dead.any():
                exited |= newly_dead
                blowup |= active & blown
                exit_steps[newly_dead] = step
                active &= ~bad

            if active.all():
                z = z_new
            else:
                z = np.where(active[:, None], z_new, z)

            ri = rec_lookup.get(step)
            if ri is not None:
                states[ri] = z
                valid_counts[active] = ri + 1

    times = np.array(rec_steps, dtype=float) * dt
    return (times, np.ascontiguousarray(states.transpose(1, 0, 2)),
            valid_counts, exited, blowup, exit_steps)


def simulate_path(model: DiffusionModel, schedule: CovarianceSchedule,
                  x0, dt: float, T: float, seed: int,
                  store_every: int = 1) -> TrajectoryPath:
    """Integrate one path; a pure function of its arguments."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    _validate_sim_args(model, x0[None], dt, T, store_every)
    times, states, valid, exited, blowup, exit_steps = _simulate_batch(
        model, schedule, x0[None], dt, T, [seed], store_every)
    c = int(valid[0])
    return TrajectoryPath(times=times[:c], states=states[0, :c], seed=int(seed),
                          exited_domain=bool(exited[0]), blowup=bool(blowup[0]),
                          exit_step=int(exit_steps[0]) if exited[0] else None)


def simulate_ensemble(model: DiffusionModel, schedule: CovarianceSchedule,
                      x0, dt: float, T: float, N: int, master_seed: int,
                      store_every: int = 1) -> TrajectoryEnsemble:
    """Integrate N paths with per-path seeds derived from the master seed.

    A failed path (domain exit or blow-up) is retained with its exit flag.
    Output is bit-identical for any parallelism degree: all paths step in
    one vectorized batch and each path draws from its own generator.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    x0 = np.asarray(x0, dtype=float)
    x0s = np.broadcast_to(x0.reshape(-1) if x0.ndim == 1 else x0,
                          (N, model.state_dim)).copy() if x0.ndim == 1 \
        else np.array(x0, dtype=float)
    if x0s.shape != (N, model.state_dim):
        raise ValueError("x0 must be (n,) or (N, n)")
    _validate_sim_args(model, x0s, dt, T, store_every)
    seeds = np.array([derive_path_seed(master_seed, k) for k in range(N)],
                     dtype=np.uint64)
    times, states, valid, exited, blowup, exit_steps = _simulate_batch(
        model, schedule, x0s, dt, T, seeds, store_every)
    return TrajectoryEnsemble(times=times, states=states, seeds=seeds,
                              valid_counts=valid, exited=exited, blowup=blowup,
                              exit_steps=exit_steps, master_seed=int(master_seed),
                              dt=dt, model_label=model.label)


def _validate_sim_args(model, x0s, dt, T, store_every):
    if dt <= 0 or dt > T:
        raise ValueError("require 0 < dt <= T")
    if store_every < 1:
        raise ValueError("store_every must be >= 1")
    if model.domain_test is not None:
        ok = np.asarray(model.domain_test(x0s), dtype=bool)
        if not ok.all():
            raise ValueError("initial state outside the model domain")


def ensemble_to_csv(ensemble: TrajectoryEnsemble, path: str) -> None:
    """Write (path_id, t, state_0..state_{n-1}) rows, 17 significant digits."""
    n = ensemble.states.shape[2]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path_id", "t"] + [f"state_{i}" for i in range(n)])
        for k in range(ensemble.n_paths):
            c = int(ensemble.valid_counts[k])
            for i in range(c):
                writer.writerow([k, format(ensemble.times[i], ".17g")]
                                + [format(v, ".17g") for v in ensemble.states[k, i]])


def ensemble_from_csv(path: str):
    """Read back rows written by :func:`ensemble_to_csv` as a plain array."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, np.array(rows)
