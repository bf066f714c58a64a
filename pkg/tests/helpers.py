"""Shared test utilities: independent oracles and small builders.

The convex-hull oracles here deliberately avoid the package's active-set
path: they search over convex weights directly, refining a simplex grid down
to a 1e-4 weight resolution.
"""

from __future__ import annotations

import numpy as np

from svsa.engine import Trajectory


def compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative ints summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in compositions(total - head, parts - 1):
            yield (head,) + rest


def grid_search_hull_point(generators, target=None, resolution: float = 1e-4,
                           coarse: int = 12, beam: int = 12):
    """Closest point of conv(generators) to ``target`` by refining grid search
    over convex weights.

    Starts from a dense simplex lattice of pitch 1/coarse and repeatedly
    halves the pitch, moving mass pairwise between coordinates, until the
    pitch drops below ``resolution``.  Returns (point, distance).
    """
    G = np.asarray(generators, dtype=float)
    k, n = G.shape
    y = np.zeros(n) if target is None else np.asarray(target, dtype=float)
    if k == 1:
        return G[0].copy(), float(np.linalg.norm(G[0] - y))

    if k == 2:
        lam = np.linspace(0.0, 1.0, int(round(1.0 / resolution)) + 1)
        pts = np.outer(lam, G[0]) + np.outer(1.0 - lam, G[1])
        d = np.linalg.norm(pts - y, axis=1)
        j = int(np.argmin(d))
        return pts[j], float(d[j])

    def evaluate(batch):
        pts = batch @ G
        return np.linalg.norm(pts - y, axis=1)

    lattice = np.array([c for c in compositions(coarse, k)], dtype=float) / coarse
    dists = evaluate(lattice)
    order = np.argsort(dists)[:beam]
    candidates = lattice[order]

    h = 1.0 / coarse
    while h > resolution:
        h *= 0.5
        pool = [candidates]
        for i in range(k):
            for j in range(k):
                if i == j:
                    continue
                moved = candidates.copy()
                moved[:, i] += h
                moved[:, j] -= h
                pool.append(moved[moved[:, j] >= -1e-15])
        batch = np.concatenate(pool)
        batch = np.unique(np.round(batch / (h * 0.5)).astype(np.int64), axis=0) * (h * 0.5)
        batch = batch[np.all(batch >= -1e-15, axis=1)]
        d = evaluate(batch)
        order = np.argsort(d)[:beam]
        candidates = batch[order]

    d = evaluate(candidates)
    j = int(np.argmin(d))
    return candidates[j] @ G, float(d[j])


def random_polytope(rng: np.random.Generator, max_generators: int = 4,
                    max_dim: int = 3, scale: float = 2.0):
    k = int(rng.integers(1, max_generators + 1))
    n = int(rng.integers(1, max_dim + 1))
    return rng.uniform(-scale, scale, (k, n))


def make_trajectory(states, steps, noises=None, seed=None) -> Trajectory:
    """Trajectory from raw states and step sizes, velocities recomputed."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.ndim == 2 and states.shape[1] != 1 and states.shape[0] == 1:
        states = states.T
    steps = np.asarray(steps, dtype=float)
    m = steps.shape[0]
    assert states.shape[0] == m + 1
    velocities = (states[1:] - states[:-1]) / steps[:, None]
    clock = np.concatenate([[0.0], np.cumsum(steps)])
    if noises is None:
        noises = np.zeros_like(velocities)
    return Trajectory(states=states, velocities=velocities, steps=steps,
                      deltas=np.zeros(m), noises=np.asarray(noises, dtype=float),
                      clock=clock, status="completed", seed=seed)
