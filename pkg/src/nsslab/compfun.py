"""Comparison-function algebra: scalar class functions, classification
evidence, inversion, composition, and the weak triangle inequality.

Class membership (positive definite, K, K-infinity, K on [0, d)) is treated
as a declared property plus numerical evidence on grids.  The library never
proves membership; :func:`classify_evidence` can only falsify a declaration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

PD = "PD"
K = "K"
KINF = "Kinf"
K_ON_0_D = "K_on_0_d"

_CLASSES = (PD, K, KINF, K_ON_0_D)

# ordering used by compose(); higher rank = stronger class
_CLASS_RANK = {KINF: 3, K: 2, K_ON_0_D: 2, PD: 1}


class DomainViolation(ValueError):
    """Argument outside the declared domain cap of a class function."""


class BracketError(ValueError):
    """Target value outside the invertible bracket supplied to invert()."""


@dataclass
class ScalarClassFunction:
    """A nonnegative scalar function with a declared comparison class.

    ``eval`` should accept numpy arrays elementwise (all functions shipped
    by this package do); ``d`` is the domain cap, finite only for the
    K-on-[0,d) class.
    """

    eval: Callable[[float], float]
    declared_class: str
    d: float = math.inf
    description: str = ""

    def __post_init__(self):
        if self.declared_class not in _CLASSES:
            raise ValueError(f"unknown class {self.declared_class!r}")
        if self.declared_class != K_ON_0_D and not math.isinf(self.d):
            raise ValueError("finite domain cap is only meaningful for K_on_0_d")
        if self.d <= 0:
            raise ValueError("domain cap must be positive")
        v0 = float(self.eval(0.0))
        if abs(v0) > 1e-12:
            raise ValueError(f"class function must vanish at 0, got f(0)={v0!r}")

    def __call__(self, r):
        arr = np.asarray(r, dtype=float)
        if np.any(arr < 0.0):
            raise DomainViolation(
                f"negative argument for {self.description or 'class function'}"
            )
        if np.any(arr >= self.d):
            raise DomainViolation(
                f"argument >= domain cap d={self.d} for {self.description or 'class function'}"
            )
        out = self.eval(arr)
        if np.ndim(r) == 0:
            return float(out)
        return np.asarray(out, dtype=float)


@dataclass
class KLFunction:
    """A two-argument function, class K in r for fixed t and decaying in t.

    Only grid evidence is available numerically; ``evidence`` falsifies the
    declared behaviour on supplied grids.
    """

    eval: Callable[[float, float], float]
    description: str = ""

    def __call__(self, r, t):
        return float(self.eval(float(r), float(t)))

    def evidence(self, r_grid: Sequence[float], t_grid: Sequence[float],
                 decay_T: float = 1e3, decay_tol: float = 1e-6):
        """Check K-in-r monotonicity and decay-in-t on grids.

        Returns a dict with any violations found.  Decay is checked by
        requiring eval(r, decay_T) <= decay_tol for each r in r_grid.
        """
        mono, nondecr, decay = [], [], []
        for t in t_grid:
            vals = [self.eval(r, t) for r in r_grid]
            for a, b, va, vb in zip(r_grid, r_grid[1:], vals, vals[1:]):
                if not vb > va:
                    mono.append((a, b, t))
        for r in r_grid:
            vals = [self.eval(r, t) for t in t_grid]
            for ta, tb, va, vb in zip(t_grid, t_grid[1:], vals, vals[1:]):
                if vb > va + 1e-12:
                    nondecr.append((r, ta, tb))
            if self.eval(r, decay_T) > decay_tol:
                decay.append(r)
        return {"monotonicity": mono, "nonincreasing": nondecr, "decay": decay,
                "consistent": not (mono or nondecr or decay)}


@dataclass
class ClassEvidenceReport:
    declared_class: str
    grid: np.ndarray
    values: np.ndarray
    monotonicity_violations: list = field(default_factory=list)
    sign_violations: list = field(default_factory=list)
    unbounded_flag: bool = False
    consistent: bool = True


def classify_evidence(f: ScalarClassFunction, grid: Sequence[float],
                      kinf_threshold: float | None = None) -> ClassEvidenceReport:
    """Collect falsification evidence for the declared class of ``f`` on a grid.

    The grid must be sorted ascending, start at 0, and stay below the domain
    cap.  For a declared Kinf function, an unboundedness heuristic flags the
    function when f(max grid) fails to exceed ``kinf_threshold`` (default
    1e-3 * max grid).  The report is evidence, never a proof.
    """
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be sorted ascending and start at 0")
    if np.any(grid >= f.d):
        raise DomainViolation(f"grid point >= domain cap d={f.d}")

    values = np.array([float(f.eval(r)) for r in grid])
    report = ClassEvidenceReport(f.declared_class, grid, values)

    if abs(values[0]) > 1e-12:
        report.sign_violations.append((0.0, values[0]))
    if f.declared_class in (K, KINF, K_ON_0_D):
        for i in range(len(grid) - 1):
            if not values[i + 1] > values[i]:
                report.monotonicity_violations.append((grid[i], grid[i + 1]))
    if f.declared_class == PD:
        for r, v in zip(grid[1:], values[1:]):
            if not v > 0:
                report.sign_violations.append((r, v))
    if f.declared_class == KINF and len(grid) > 1:
        threshold = 1e-3 * grid[-1] if kinf_threshold is None else kinf_threshold
        if values[-1] < threshold:
            report.unbounded_flag = True

    report.consistent = not (report.monotonicity_violations
                             or report.sign_violations
                             or report.unbounded_flag)
    return report


def invert(f: ScalarClassFunction, y: float, bracket_hi: float,
           tol: float = 1e-10, max_iter: int = 200) -> float:
    """Invert a strictly increasing scalar function by bisection.

    Returns r with ``|f(r) - y| <= tol * max(1, y)``.  The caller supplies
    the bracket; ``f`` must be strictly increasing on [0, bracket_hi].
    """
    if bracket_hi <= 0:
        raise ValueError("bracket_hi must be positive")
    y = float(y)
    f_lo = float(f.eval(0.0))
    f_hi = float(f.eval(bracket_hi))
    if not (f_lo <= y <= f_hi):
        raise BracketError(f"y={y} outside [f(0), f(hi)]=[{f_lo}, {f_hi}]")
    lo, hi = 0.0, float(bracket_hi)
    goal = tol * max(1.0, abs(y))
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = float(f.eval(mid))
        if abs(fm - y) <= goal:
            return mid
        if fm < y:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17 * max(1.0, hi):
            break
    return mid


def _auto_bracket(f: ScalarClassFunction, y: float, start: float = 1.0,
                  max_doublings: int = 200) -> float:
    hi = start
    for _ in range(max_doublings):
        if hi >= f.d:
            hi = f.d * (1 - 1e-12)
        if float(f.eval(hi)) >= y:
            return hi
        if hi >= f.d * (1 - 1e-12):
            break
        hi *= 2.0
    raise BracketError(f"could not bracket y={y} for {f.description or 'function'}")


def invert_auto(f: ScalarClassFunction, y: float) -> float:
    """Invert with an automatically grown bracket (doubling from 1)."""
    if y <= 0:
        return 0.0
    return invert(f, y, _auto_bracket(f, y))


def weak_triangle_split(alpha: ScalarClassFunction, rho: ScalarClassFunction,
                        a: float, b: float) -> tuple[float, float]:
    """Evaluate both sides of alpha(a+b) <= alpha((Id+rho)(a)) + alpha((Id+rho^-1)(b)).

    ``rho`` must be invertible on a bracket covering ``b`` (grown
    automatically).  Returns (lhs, rhs); the inequality holds for class-K
    alpha and class-Kinf rho.
    """
    a, b = float(a), float(b)
    lhs = float(alpha.eval(a + b))
    rho_inv_b = invert_auto(rho, b)
    rhs = float(alpha.eval(a + float(rho.eval(a)))) + float(alpha.eval(b + rho_inv_b))
    return lhs, rhs


def compose(f: ScalarClassFunction, g: ScalarClassFunction) -> ScalarClassFunction:
    """Pointwise composition f(g(r)); the result carries the weaker class.

    Evaluation raises :class:`DomainViolation` if g(r) reaches the domain
    cap of f.
    """
    weaker = f if _CLASS_RANK[f.declared_class] <= _CLASS_RANK[g.declared_class] else g

    def h(r):
        gr = np.asarray(g.eval(r), dtype=float)
        if np.any(gr >= f.d):
            raise DomainViolation("inner value exceeds outer domain cap")
        return f.eval(gr)

    return ScalarClassFunction(
        eval=h, declared_class=weaker.declared_class, d=g.d,
        description=f"({f.description or 'f'}) o ({g.description or 'g'})")


def identity() -> ScalarClassFunction:
    return ScalarClassFunction(lambda r: np.asarray(r, dtype=float) + 0.0, KINF,
                               description="Id")


def from_table(h_vals: np.ndarray, f_vals: np.ndarray, declared_class: str = K,
               description: str = "") -> ScalarClassFunction:
    """Piecewise-linear class function from a table, clamped flat past the end."""
    h_vals = np.asarray(h_vals, dtype=float)
    f_vals = np.asarray(f_vals, dtype=float)
    return ScalarClassFunction(
        eval=lambda r: np.interp(np.asarray(r, dtype=float), h_vals, f_vals),
        declared_class=declared_class, description=description)


def catalog() -> list[ScalarClassFunction]:
    """Named K/Kinf/PD functions with classes known by construction."""
    sq = ScalarClassFunction(lambda r: np.square(r), KINF, description="r^2")
    sqrt = ScalarClassFunction(lambda r: np.sqrt(r), KINF, description="sqrt(r)")
    lin2 = ScalarClassFunction(lambda r: 2.0 * np.asarray(r, dtype=float), KINF,
                               description="2r")
    log1p = ScalarClassFunction(np.log1p, KINF, description="log(1+r)")
    sat = ScalarClassFunction(lambda r: np.asarray(r, dtype=float) / (1.0 + r), K,
                              description="r/(1+r)")
    atan = ScalarClassFunction(np.arctan, K, description="atan(r)")
    bump = ScalarClassFunction(
        lambda r: np.square(r) / (1.0 + np.square(r)), PD,
        description="r^2/(1+r^2)")
    return [identity(), sq, sqrt, lin2, log1p, sat, atan, bump]
