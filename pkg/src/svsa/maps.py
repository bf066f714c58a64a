"""Set-valued maps, subdifferentials of max-of-smooth functions, and
graph-enlargement sampling.

A map H: R^n => R^n is represented by a pure evaluation function returning
the finite generator list of H(x); all values are convex hulls of those
generators.  Randomized operations take an explicit numpy Generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .geometry import Polytope, distance_to_hull, min_norm_point

SELECTION_RULES = ("min_norm", "random_vertex", "random_hull")

DEFAULT_ACTIVITY_TOL = 1e-8


class SetValuedMap:
    """A map x -> Polytope with non-empty compact convex (hull) values."""

    __slots__ = ("dimension", "_evaluate", "growth_bound", "name")

    def __init__(self, dimension: int, evaluate: Callable[[np.ndarray], Polytope],
                 growth_bound: float | None = None, name: str = ""):
        self.dimension = int(dimension)
        self._evaluate = evaluate
        self.growth_bound = growth_bound
        self.name = name

    def evaluate(self, x) -> Polytope:
        return self._evaluate(np.asarray(x, dtype=float))

    def __repr__(self) -> str:
        label = self.name or "anonymous"
        return f"SetValuedMap({label}, R^{self.dimension})"


def negate(H: SetValuedMap) -> SetValuedMap:
    """The map x -> -H(x)."""
    def ev(x):
        return Polytope(-H.evaluate(x).generators, copy=False)
    return SetValuedMap(H.dimension, ev, growth_bound=H.growth_bound,
                        name=f"-({H.name})" if H.name else "")


def singleton_map(dimension: int, func: Callable[[np.ndarray], np.ndarray],
                  growth_bound: float | None = None, name: str = "") -> SetValuedMap:
    """Wrap a single-valued vector field as a set-valued map."""
    def ev(x):
        return Polytope(np.asarray(func(x), dtype=float).reshape(1, -1), copy=False)
    return SetValuedMap(dimension, ev, growth_bound=growth_bound, name=name)


def check_linear_growth(H: SetValuedMap, points) -> float:
    """Max over points/generators of ||g|| - C(1 + ||x||); <= 0 certifies the bound."""
    if H.growth_bound is None:
        raise ValueError("map declares no growth bound")
    worst = -np.inf
    for x in np.atleast_2d(np.asarray(points, dtype=float)):
        g = H.evaluate(x).generators
        slack = np.linalg.norm(g, axis=1).max() - H.growth_bound * (1.0 + np.linalg.norm(x))
        worst = max(worst, float(slack))
    return worst


@dataclass(frozen=True)
class SmoothPiece:
    """One smooth branch f_k of a finite max, with its gradient."""
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]


class MaxOfSmoothFunction:
    """f(x) = max_k f_k(x) over finitely many smooth pieces.

    The generalized gradient at x is the hull of the gradients of the pieces
    active within ``activity_tol`` of the max; the tolerance keeps the set
    upper semicontinuous under floating point.
    """

    __slots__ = ("pieces", "dimension", "activity_tol", "name")

    def __init__(self, pieces: Sequence[SmoothPiece], dimension: int,
                 activity_tol: float = DEFAULT_ACTIVITY_TOL, name: str = ""):
        if not pieces:
            raise ValueError("need at least one piece")
        if activity_tol <= 0.0:
            raise ValueError("activity tolerance must be positive")
        self.pieces = tuple(pieces)
        self.dimension = int(dimension)
        self.activity_tol = float(activity_tol)
        self.name = name

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return max(p.value(x) for p in self.pieces)

    def validate_gradients(self, rng: np.random.Generator, n_points: int = 20,
                           box: tuple[float, float] = (-2.0, 2.0),
                           step: float = 1e-6, tol: float = 1e-4) -> float:
        """Worst central finite-difference error of any piece gradient.

        Raises if the error exceeds ``tol`` at any of the random points.
        """
        lo, hi = box
        worst = 0.0
        for _ in range(n_points):
            x = rng.uniform(lo, hi, self.dimension)
            for piece in self.pieces:
                grad = np.asarray(piece.gradient(x), dtype=float)
                fd = np.empty(self.dimension)
                for k in range(self.dimension):
                    e = np.zeros(self.dimension)
                    e[k] = step
                    fd[k] = (piece.value(x + e) - piece.value(x - e)) / (2.0 * step)
                err = float(np.max(np.abs(fd - grad)))
                worst = max(worst, err)
                if err > tol:
                    raise ValueError(f"piece gradient disagrees with finite differences "
                                     f"({err:.3g} > {tol:.3g}) at {x}")
        return worst


def clarke_subdifferential(f: MaxOfSmoothFunction, x) -> Polytope:
    """Hull generators of the generalized gradient: active-piece gradients."""
    x = np.asarray(x, dtype=float)
    values = [p.value(x) for p in f.pieces]
    cutoff = max(values) - f.activity_tol
    grads = [np.asarray(p.gradient(x), dtype=float)
             for p, v in zip(f.pieces, values) if v >= cutoff]
    return Polytope(grads)


def clarke_map(f: MaxOfSmoothFunction, growth_bound: float | None = None) -> SetValuedMap:
    """The subdifferential of f as a set-valued map."""
    def ev(x):
        return clarke_subdifferential(f, x)
    return SetValuedMap(f.dimension, ev, growth_bound=growth_bound,
                        name=f"subdiff({f.name})" if f.name else "subdiff")


def selection(H: SetValuedMap, x, rule: str, rng: np.random.Generator | None = None) -> np.ndarray:
    """One element of H(x): the min-norm point, a random generator, or a
    random hull point (flat Dirichlet weights)."""
    poly = H.evaluate(x)
    return _select_from(poly, rule, rng)


def _select_from(poly: Polytope, rule: str, rng: np.random.Generator | None) -> np.ndarray:
    g = poly.generators
    if rule not in SELECTION_RULES:
        raise ValueError(f"unknown selection rule {rule!r}; expected one of {SELECTION_RULES}")
    if g.shape[0] == 1:
        return g[0].copy()
    if rule == "min_norm":
        return min_norm_point(poly)
    if rng is None:
        raise ValueError(f"selection rule {rule!r} needs an rng")
    if rule == "random_vertex":
        return g[int(rng.integers(g.shape[0]))].copy()
    w = rng.dirichlet(np.ones(g.shape[0]))
    return w @ g


def uniform_ball(rng: np.random.Generator, dimension: int) -> np.ndarray:
    """Uniform draw from the closed unit ball."""
    d = rng.normal(size=dimension)
    norm = np.linalg.norm(d)
    if norm == 0.0:
        return np.zeros(dimension)
    radius = rng.uniform() ** (1.0 / dimension)
    return (radius / norm) * d


def enlargement_sample(H: SetValuedMap, x, delta: float, rng: np.random.Generator | None,
                       rule: str = "random_hull") -> np.ndarray:
    """Draw y from the delta-enlargement of H at x.

    Constructs z = x + delta*u and y = h + delta*w with u, w uniform on the
    unit ball and h a selection from H(z); y then belongs to the enlarged
    value by construction.  With delta = 0 this is a plain selection.
    """
    if delta < 0.0:
        raise ValueError("delta must be non-negative")
    x = np.asarray(x, dtype=float)
    if delta == 0.0:
        return selection(H, x, rule, rng)
    if rng is None:
        raise ValueError("enlargement sampling with delta > 0 needs an rng")
    z = x + delta * uniform_ball(rng, H.dimension)
    h = selection(H, z, rule, rng)
    return h + delta * uniform_ball(rng, H.dimension)


def _grid_offsets(dimension: int, per_axis: int = 5) -> np.ndarray:
    axes = [np.linspace(-1.0, 1.0, per_axis)] * dimension
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    inside = np.linalg.norm(pts, axis=1) <= 1.0
    return pts[inside]


def enlargement_slack(H: SetValuedMap, x, y, delta: float, z_samples: int = 32,
                      rng: np.random.Generator | None = None) -> float:
    """min over sampled z in the closed delta-ball of d(y, H(z)) - delta.

    A value <= 0 certifies membership of y in the delta-enlargement at x;
    a positive value is only an upper bound obtained from the sampled z's
    (the certificate is one-sided).  With delta = 0 this reduces to the
    distance from y to H(x).  The candidate set always contains z = x and,
    in dimension <= 3, a deterministic lattice over the ball.
    """
    if z_samples < 1:
        raise ValueError("z_samples must be >= 1")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if delta == 0.0:
        return distance_to_hull(y, H.evaluate(x))
    candidates = [x]
    if H.dimension <= 3:
        candidates.extend(x + delta * off for off in _grid_offsets(H.dimension))
    if rng is None:
        rng = np.random.default_rng(0)
    candidates.extend(x + delta * uniform_ball(rng, H.dimension) for _ in range(z_samples))
    best = min(distance_to_hull(y, H.evaluate(z)) for z in candidates)
    return best - delta


# Ready-made nonsmooth test functions -------------------------------------

def abs_value(activity_tol: float = DEFAULT_ACTIVITY_TOL) -> MaxOfSmoothFunction:
    """f(x) = |x| on R, as max(x, -x)."""
    pieces = (
        SmoothPiece(lambda x: float(x[0]), lambda x: np.array([1.0])),
        SmoothPiece(lambda x: float(-x[0]), lambda x: np.array([-1.0])),
    )
    return MaxOfSmoothFunction(pieces, 1, activity_tol=activity_tol, name="abs")


def half_square_norm(dimension: int) -> MaxOfSmoothFunction:
    """f(x) = ||x||^2 / 2, smooth (a single piece)."""
    piece = SmoothPiece(lambda x: 0.5 * float(x @ x), lambda x: x.copy())
    return MaxOfSmoothFunction((piece,), dimension, name=f"half_square_norm{dimension}")


def max_of_squares(dimension: int, activity_tol: float = DEFAULT_ACTIVITY_TOL) -> MaxOfSmoothFunction:
    """f(x) = max_k x_k^2."""
    def make(k):
        def grad(x, k=k):
            g = np.zeros(len(x))
            g[k] = 2.0 * x[k]
            return g
        return SmoothPiece(lambda x, k=k: float(x[k] ** 2), grad)
    pieces = tuple(make(k) for k in range(dimension))
    return MaxOfSmoothFunction(pieces, dimension, activity_tol=activity_tol,
                               name=f"max_of_squares{dimension}")
