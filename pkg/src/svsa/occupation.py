"""Weighted occupation measures on (position, velocity) pairs and the
measure-level diagnostics built on them.

A measure stores samples (x_j, v_{j+1}) with weights eps_j; every query
normalizes by the total weight, so the measure has unit mass.  Two stores
merge by concatenation, and a weight-proportional thinning keeps the sample
count bounded for very long runs.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .engine import Trajectory
from .geometry import distance_to_hull
from .maps import SetValuedMap

DEFAULT_MAX_SAMPLES = 1_000_000

# Probes farther than this many bandwidths from every sample are undefined.
KERNEL_REACH = 5.0


class UndefinedEstimateError(RuntimeError):
    """Raised when a kernel estimate has no sample support at the query point."""


class OccupationMeasure:
    """Sample store realizing the step-weighted empirical measure."""

    __slots__ = ("dimension", "max_samples", "thin_seed", "_thin_events",
                 "positions", "velocities", "weights", "_total")

    def __init__(self, dimension: int, max_samples: int = DEFAULT_MAX_SAMPLES,
                 thin_seed: int = 0):
        self.dimension = int(dimension)
        self.max_samples = int(max_samples)
        self.thin_seed = int(thin_seed)
        self._thin_events = 0
        self.positions = np.empty((0, self.dimension))
        self.velocities = np.empty((0, self.dimension))
        self.weights = np.empty(0)
        self._total = 0.0

    @classmethod
    def from_arrays(cls, positions, velocities, weights,
                    max_samples: int = DEFAULT_MAX_SAMPLES,
                    thin_seed: int = 0) -> "OccupationMeasure":
        positions = np.atleast_2d(np.asarray(positions, dtype=float))
        measure = cls(positions.shape[1], max_samples=max_samples, thin_seed=thin_seed)
        measure.extend(positions, velocities, weights)
        return measure

    @property
    def n_samples(self) -> int:
        return self.weights.shape[0]

    @property
    def total_weight(self) -> float:
        return self._total

    def extend(self, positions, velocities, weights) -> None:
        """Append samples; thins weight-proportionally past ``max_samples``."""
        x = np.atleast_2d(np.asarray(positions, dtype=float))
        v = np.atleast_2d(np.asarray(velocities, dtype=float))
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        if x.shape != v.shape or x.shape[0] != w.shape[0] or x.shape[1] != self.dimension:
            raise ValueError("positions, velocities and weights do not line up")
        if np.any(w < 0.0):
            raise ValueError("weights must be non-negative")
        self.positions = np.concatenate([self.positions, x])
        self.velocities = np.concatenate([self.velocities, v])
        self.weights = np.concatenate([self.weights, w])
        self._total += float(w.sum())
        if self.n_samples > self.max_samples:
            self._thin()

    def _thin(self) -> None:
        # Weight-proportional resampling down to max_samples, with the
        # retained samples carrying equal merged weights of the same mass.
        rng = np.random.default_rng([self.thin_seed, self._thin_events])
        self._thin_events += 1
        total = float(self.weights.sum())
        idx = rng.choice(self.n_samples, size=self.max_samples, replace=True,
                         p=self.weights / total)
        idx.sort()
        self.positions = self.positions[idx]
        self.velocities = self.velocities[idx]
        self.weights = np.full(self.max_samples, total / self.max_samples)
        self._total = float(self.weights.sum())

    def merge(self, other: "OccupationMeasure") -> "OccupationMeasure":
        """Concatenation of the two stores (associative, commutative in law)."""
        if other.dimension != self.dimension:
            raise ValueError("cannot merge measures of different dimensions")
        out = OccupationMeasure(self.dimension,
                                max_samples=max(self.max_samples, other.max_samples),
                                thin_seed=self.thin_seed)
        out.extend(np.concatenate([self.positions, other.positions]),
                   np.concatenate([self.velocities, other.velocities]),
                   np.concatenate([self.weights, other.weights]))
        return out


def accumulate(trajectory: Trajectory, upto: int | None = None,
               max_samples: int = DEFAULT_MAX_SAMPLES) -> OccupationMeasure:
    """Occupation measure of a trajectory prefix: samples (x_j, v_{j+1}, eps_j)
    for j < upto (defaults to the full run)."""
    m = trajectory.n_steps if upto is None else min(int(upto), trajectory.n_steps)
    if m < 1:
        raise ValueError("trajectory must contain at least one step")
    return OccupationMeasure.from_arrays(trajectory.states[:m],
                                         trajectory.velocities[:m],
                                         trajectory.steps[:m],
                                         max_samples=max_samples)


# Regions ---------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def contains(self, points: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, dtype=float)
        return np.linalg.norm(np.atleast_2d(points) - c, axis=1) <= self.radius


@dataclass(frozen=True)
class Box:
    lower: tuple
    upper: tuple

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.atleast_2d(points)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        return np.all((p >= lo) & (p <= hi), axis=1)


def residence_time(measure: OccupationMeasure, region) -> float:
    """Normalized weight of the samples whose position lies in the region."""
    mask = region.contains(measure.positions)
    return float(measure.weights[mask].sum() / measure.total_weight)


def _cell_residences(measure: OccupationMeasure, cell_size: float) -> dict[tuple, float]:
    cells = np.floor(measure.positions / cell_size).astype(np.int64)
    uniq, inverse = np.unique(cells, axis=0, return_inverse=True)
    masses = np.bincount(inverse, weights=measure.weights) / measure.total_weight
    return {tuple(row): float(m) for row, m in zip(uniq, masses)}


def essential_accumulation_estimate(checkpoints: Sequence[OccupationMeasure],
                                    cell_size: float, threshold: float) -> np.ndarray:
    """Cells (by center) that retain at least ``threshold`` residence time in
    one of the last half of the checkpoints.

    The lattice is axis-aligned with pitch ``cell_size`` anchored at the
    origin.  This is a finite-horizon proxy: a cell qualifying in some late
    checkpoint stands in for a neighborhood with non-vanishing limsup
    residence time.
    """
    if len(checkpoints) == 0:
        raise ValueError("no checkpoints given")
    if len(checkpoints) < 2:
        raise ValueError("need at least two checkpoints at increasing iteration counts")
    counts = [cp.n_samples for cp in checkpoints]
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError("checkpoints must have strictly increasing sample counts")
    if threshold <= 0.0 or cell_size <= 0.0:
        raise ValueError("cell_size and threshold must be positive")

    tail = checkpoints[-math.ceil(len(checkpoints) / 2):]
    qualifying: set[tuple] = set()
    for cp in tail:
        for cell, mass in _cell_residences(cp, cell_size).items():
            if mass >= threshold:
                qualifying.add(cell)
    if not qualifying:
        return np.empty((0, checkpoints[0].dimension))
    cells = np.array(sorted(qualifying), dtype=float)
    return (cells + 0.5) * cell_size


# Velocity integrals -----------------------------------------------------------

def circulation(measure: OccupationMeasure, field: Callable[[np.ndarray], np.ndarray]) -> float:
    """Normalized weighted sum of <field(x_j), v_{j+1}>.

    ``field`` must accept the full (M, n) position array and return (M, n).
    """
    values = np.asarray(field(measure.positions), dtype=float)
    dots = np.einsum("ij,ij->i", values, measure.velocities)
    return float(np.sum(measure.weights * dots) / measure.total_weight)


def closed_residual(measure: OccupationMeasure, g: "SmoothTestFunction") -> float:
    """How far the measure is from annihilating <grad g(x), v>; decays to 0
    along conforming runs."""
    return circulation(measure, g.gradient)


def interpolated_residual(trajectory: Trajectory, g: "SmoothTestFunction") -> float:
    """Exact time average of <grad g, x'> along the piecewise-linear
    interpolation of the run: (g(x_last) - g(x_0)) / t_last."""
    t = trajectory.elapsed
    if t <= 0.0:
        raise ValueError("trajectory has zero elapsed clock")
    return float((g.value(trajectory.states[-1]) - g.value(trajectory.states[0])) / t)


def interpolation_bound(trajectory: Trajectory, grad_constant: float) -> float:
    """Upper bound on |measure residual - interpolated residual|:
    (C / t_last) * sum_j eps_j ||v_{j+1}|| min(1, eps_j ||v_{j+1}||),
    valid whenever C dominates both the gradient Lipschitz constant and twice
    the gradient sup-norm of g over the hull of the states."""
    t = trajectory.elapsed
    if t <= 0.0:
        raise ValueError("trajectory has zero elapsed clock")
    speeds = np.linalg.norm(trajectory.velocities, axis=1)
    ev = trajectory.steps * speeds
    return float(grad_constant / t * np.sum(ev * np.minimum(1.0, ev)))


def velocity_moment(measure: OccupationMeasure, q: float) -> float:
    """Normalized weighted q-th moment of the velocity norms (q > 1)."""
    if q <= 1.0:
        raise ValueError("moment order must exceed 1")
    speeds = np.linalg.norm(measure.velocities, axis=1)
    return float(np.sum(measure.weights * speeds ** q) / measure.total_weight)


class OscillationStatistic(NamedTuple):
    weighted_average: np.ndarray  # sum_j eps_j psi(x_j) v_{j+1} / sum_j eps_j
    psi_weight: float             # sum_j eps_j psi(x_j), for the conditional form


def oscillation_statistic(measure: OccupationMeasure, psi) -> OscillationStatistic:
    """Step-weighted, psi-localized velocity average, plus the localized mass
    so callers can form the conditional average and check that the localized
    fraction stays bounded away from zero."""
    fn = psi.value if isinstance(psi, WeightFunction) else psi
    pw = measure.weights * np.asarray(fn(measure.positions), dtype=float)
    avg = (pw @ measure.velocities) / measure.total_weight
    return OscillationStatistic(np.asarray(avg, dtype=float), float(pw.sum()))


# Centroid field ----------------------------------------------------------------

def plugin_bandwidth(measure: OccupationMeasure) -> float:
    """Plug-in kernel bandwidth 1.06 * sigma_hat * M^(-1/(4+n)) with sigma_hat
    the root-mean weighted per-coordinate deviation."""
    w = measure.weights / measure.total_weight
    mean = w @ measure.positions
    var = w @ (measure.positions - mean) ** 2
    sigma = math.sqrt(float(var.mean()))
    h = 1.06 * sigma * measure.n_samples ** (-1.0 / (4 + measure.dimension))
    return max(h, 1e-12)


def centroid_field_estimate(measure: OccupationMeasure, x, bandwidth: float) -> np.ndarray:
    """Kernel-weighted mean velocity at x (Gaussian kernel, sample weights).

    Raises UndefinedEstimateError when no sample lies within KERNEL_REACH
    bandwidths of x.
    """
    if bandwidth <= 0.0:
        raise ValueError("bandwidth must be positive")
    x = np.asarray(x, dtype=float)
    d2 = np.einsum("ij,ij->i", measure.positions - x, measure.positions - x)
    if float(d2.min(initial=np.inf)) > (KERNEL_REACH * bandwidth) ** 2:
        raise UndefinedEstimateError(f"no sample within {KERNEL_REACH} bandwidths of {x}")
    kernel = measure.weights * np.exp(-0.5 * d2 / bandwidth ** 2)
    return (kernel @ measure.velocities) / kernel.sum()


def centroid_membership_gap(measure: OccupationMeasure, H: SetValuedMap,
                            probe_points, bandwidth: float) -> float:
    """Max over defined probes of the distance from the estimated mean
    velocity to the map value there."""
    worst = None
    for p in np.atleast_2d(np.asarray(probe_points, dtype=float)):
        try:
            est = centroid_field_estimate(measure, p, bandwidth)
        except UndefinedEstimateError:
            continue
        gap = distance_to_hull(est, H.evaluate(p))
        worst = gap if worst is None else max(worst, gap)
    if worst is None:
        raise UndefinedEstimateError("estimator undefined at every probe point")
    return float(worst)


# Checkpoint serialization --------------------------------------------------------

def checkpoint_sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def save_checkpoint(measure: OccupationMeasure, csv_path, iteration: int,
                    seed: int | None) -> tuple[Path, Path]:
    """Write the sample table as CSV (header row, 17 significant digits) plus
    a JSON sidecar with dimension, total weight, iteration and seed."""
    csv_path = Path(csv_path)
    n = measure.dimension
    header = ["j"] + [f"x{k}" for k in range(n)] + [f"v{k}" for k in range(n)] + ["weight"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for j in range(measure.n_samples):
            row = [str(j)]
            row += [f"{val:.17g}" for val in measure.positions[j]]
            row += [f"{val:.17g}" for val in measure.velocities[j]]
            row.append(f"{measure.weights[j]:.17g}")
            writer.writerow(row)
    sidecar = checkpoint_sidecar_path(csv_path)
    meta = {"dimension": n, "total_weight": measure.total_weight,
            "iteration": int(iteration), "seed": seed}
    with open(sidecar, "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return csv_path, sidecar


def load_checkpoint(csv_path) -> tuple[OccupationMeasure, dict]:
    csv_path = Path(csv_path)
    sidecar = checkpoint_sidecar_path(csv_path)
    with open(sidecar) as fh:
        meta = json.load(fh)
    n = int(meta["dimension"])
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 2 * n + 2:
        raise ValueError(f"checkpoint has {data.shape[1]} columns, expected {2 * n + 2}")
    measure = OccupationMeasure.from_arrays(data[:, 1:n + 1], data[:, n + 1:2 * n + 1],
                                            data[:, 2 * n + 1])
    return measure, meta


# Test function bank ----------------------------------------------------------------

@dataclass(frozen=True)
class SmoothTestFunction:
    """A smooth scalar observable with vectorized value/gradient and an
    interpolation constant dominating max(Lip(grad), 2 sup||grad||) over the
    bank's box."""
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    interpolation_constant: float


@dataclass(frozen=True)
class WeightFunction:
    """A bounded continuous localizer psi."""
    name: str
    value: Callable[[np.ndarray], np.ndarray]


def _monomial(center: np.ndarray, half: np.ndarray, alpha: np.ndarray) -> SmoothTestFunction:
    alpha = np.asarray(alpha, dtype=float)
    if len(alpha) == 1:
        name = f"u^{int(alpha[0])}"
    else:
        name = "*".join(f"u{k}^{int(a)}" for k, a in enumerate(alpha) if a > 0)

    def value(X):
        U = (np.asarray(X, dtype=float) - center) / half
        return np.prod(U ** alpha, axis=-1)

    def gradient(X):
        X = np.asarray(X, dtype=float)
        U = (X - center) / half
        out = np.zeros_like(U)
        for k in range(len(alpha)):
            if alpha[k] == 0:
                continue
            e = alpha.copy()
            e[k] -= 1.0
            out[..., k] = alpha[k] / half[k] * np.prod(U ** e, axis=-1)
        return out

    # Hessian entries over the box in normalized coordinates |u| <= 1 are
    # bounded by a_i a_j (a_i (a_i - 1) on the diagonal).
    bound = np.outer(alpha, alpha)
    np.fill_diagonal(bound, alpha * np.maximum(alpha - 1.0, 0.0))
    lip = float(np.sqrt(np.sum((bound / np.outer(half, half)) ** 2)))
    grad_sup = float(np.sqrt(np.sum((alpha / half) ** 2)))
    return SmoothTestFunction(name, value, gradient,
                              max(lip, 2.0 * grad_sup))


def _radial_bump(center: np.ndarray, width: float, tag: int) -> SmoothTestFunction:
    def value(X):
        D = np.asarray(X, dtype=float) - center
        return np.exp(-0.5 * np.sum(D * D, axis=-1) / width ** 2)

    def gradient(X):
        D = np.asarray(X, dtype=float) - center
        g = np.exp(-0.5 * np.sum(D * D, axis=-1) / width ** 2)
        return -D / width ** 2 * g[..., None]

    # Global bounds for the Gaussian profile: ||Hess|| <= 1/w^2 and
    # sup ||grad|| = e^{-1/2}/w.
    lip = 1.0 / width ** 2
    grad_sup = math.exp(-0.5) / width
    return SmoothTestFunction(f"bump{tag}", value, gradient, max(lip, 2.0 * grad_sup))


def constant_one() -> WeightFunction:
    return WeightFunction("one", lambda X: np.ones(np.atleast_2d(X).shape[0]))


def coordinate_sigmoid(axis: int, center: float, scale: float) -> WeightFunction:
    def value(X):
        t = (np.atleast_2d(X)[:, axis] - center) / scale
        return 1.0 / (1.0 + np.exp(-t))
    return WeightFunction(f"sigmoid{axis}", value)


def bump_on_ball(center, radius: float) -> WeightFunction:
    """Smooth bump supported on the closed ball: exp(1 - 1/(1 - r^2)) inside,
    0 outside."""
    c = np.asarray(center, dtype=float)

    def value(X):
        r2 = np.sum((np.atleast_2d(X) - c) ** 2, axis=1) / radius ** 2
        out = np.zeros(r2.shape[0])
        inside = r2 < 1.0
        with np.errstate(divide="ignore"):
            out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out

    return WeightFunction("ball_bump", value)


@dataclass(frozen=True)
class TestFunctionBank:
    """Smooth observables g (monomials over a box plus seeded radial bumps)
    and bounded continuous localizers psi."""
    __test__ = False  # not a pytest class, despite the name
    functions: tuple[SmoothTestFunction, ...]
    weights: tuple[WeightFunction, ...]
    lower: np.ndarray
    upper: np.ndarray

    @staticmethod
    def from_box(lower, upper, degree: int = 3, n_bumps: int = 4,
                 seed: int = 7) -> "TestFunctionBank":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        n = lower.shape[0]
        center = 0.5 * (lower + upper)
        half = np.maximum(0.5 * (upper - lower), 1e-9)

        functions: list[SmoothTestFunction] = []
        for alpha in itertools.product(range(degree + 1), repeat=n):
            if 0 < sum(alpha) <= degree:
                functions.append(_monomial(center, half, np.array(alpha)))
        rng = np.random.default_rng(seed)
        width = 0.25 * float(np.linalg.norm(half))
        for tag in range(n_bumps):
            c = rng.uniform(lower, upper)
            functions.append(_radial_bump(c, width, tag))

        weights = [constant_one()]
        weights += [coordinate_sigmoid(k, float(center[k]), float(half[k]))
                    for k in range(n)]
        weights.append(bump_on_ball(center, float(np.linalg.norm(half)) + 1e-9))
        return TestFunctionBank(tuple(functions), tuple(weights), lower, upper)

    @staticmethod
    def from_positions(positions, degree: int = 3, n_bumps: int = 4,
                       seed: int = 7) -> "TestFunctionBank":
        X = np.atleast_2d(np.asarray(positions, dtype=float))
        lower = X.min(axis=0)
        upper = X.max(axis=0)
        pad = 1e-9 * (1.0 + np.abs(upper - lower))
        return TestFunctionBank.from_box(lower - pad, upper + pad, degree=degree,
                                         n_bumps=n_bumps, seed=seed)

    def validate_gradients(self, rng: np.random.Generator, n_points: int = 10,
                           step: float = 1e-6, tol: float = 1e-4) -> float:
        """Worst central-difference error over random box points; raises past tol."""
        worst = 0.0
        n = self.lower.shape[0]
        for _ in range(n_points):
            x = rng.uniform(self.lower, self.upper)
            for g in self.functions:
                grad = np.asarray(g.gradient(x), dtype=float)
                fd = np.empty(n)
                for k in range(n):
                    e = np.zeros(n)
                    e[k] = step
                    fd[k] = (g.value(x + e) - g.value(x - e)) / (2.0 * step)
                err = float(np.max(np.abs(fd - grad)))
                worst = max(worst, err)
                if err > tol:
                    raise ValueError(f"gradient of {g.name} off by {err:.3g} at {x}")
        return worst
