"""Stochastic approximation engines.

The generic recursion draws one element of the (optionally enlarged)
set-valued map per step, adds martingale noise, and records the full run:
states, velocities v_{i+1} = (x_{i+1} - x_i)/eps_i, step sizes, enlargement
radii, noise draws and the algorithmic clock t_i = sum_{j<i} eps_j.
A hard guard radius makes the boundedness event observable: runs that
leave the ball are truncated and marked escaped instead of projected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import games as games_mod
from .geometry import Polytope
from .maps import (MaxOfSmoothFunction, SetValuedMap, _select_from, clarke_map,
                   clarke_subdifferential, negate, uniform_ball)

DEFAULT_SELECTION_RULE = "random_hull"


# Step-size schedules -------------------------------------------------------

@dataclass(frozen=True)
class StepSchedule:
    """Deterministic positive step sizes eps_i.

    Kinds: power (a/(i+1)^rho), logarithmic (a/ln(i+2)), constant (a).
    Power with rho in (0, 1] and logarithmic vanish with divergent partial
    sums; the constant kind is intended for negative controls only and is
    reported as non-conforming by ``violations``.
    """
    kind: str
    a: float
    rho: float = 1.0

    def __post_init__(self):
        if self.kind not in ("power", "logarithmic", "constant"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.a <= 0.0:
            raise ValueError("schedule scale must be positive")
        if self.kind == "power" and self.rho <= 0.0:
            raise ValueError("power exponent must be positive")

    @classmethod
    def power(cls, a: float, rho: float) -> "StepSchedule":
        return cls("power", a, rho)

    @classmethod
    def logarithmic(cls, a: float) -> "StepSchedule":
        return cls("logarithmic", a)

    @classmethod
    def constant(cls, a: float) -> "StepSchedule":
        return cls("constant", a)

    def step(self, i: int) -> float:
        if self.kind == "power":
            return self.a / (i + 1) ** self.rho
        if self.kind == "logarithmic":
            return self.a / math.log(i + 2)
        return self.a

    def values(self, n: int) -> np.ndarray:
        i = np.arange(n, dtype=float)
        if self.kind == "power":
            return self.a / (i + 1.0) ** self.rho
        if self.kind == "logarithmic":
            return self.a / np.log(i + 2.0)
        return np.full(n, self.a)

    def violations(self) -> list[str]:
        """Non-empty iff the schedule breaks the vanishing/divergence requirements."""
        out = []
        if self.kind == "constant":
            out.append("schedule: constant step sizes do not vanish (negative-control only)")
        elif self.kind == "power" and self.rho > 1.0:
            out.append(f"schedule: sum of step sizes is finite for rho={self.rho} > 1; "
                       "divergence is required")
        return out


# Noise models ---------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean i.i.d. perturbations with a declared finite moment order q > 1.

    Kinds: gaussian(sigma), uniform_ball(radius), student_t(df, scale), none.
    """
    kind: str
    sigma: float = 0.0
    radius: float = 0.0
    df: float = 0.0
    scale: float = 0.0
    moment_order: float = 2.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform_ball", "student_t", "none"):
            raise ValueError(f"unknown noise kind {self.kind!r}")

    @classmethod
    def gaussian(cls, sigma: float, moment_order: float = 2.0) -> "NoiseModel":
        return cls("gaussian", sigma=sigma, moment_order=moment_order)

    @classmethod
    def uniform_ball_noise(cls, radius: float, moment_order: float = 2.0) -> "NoiseModel":
        return cls("uniform_ball", radius=radius, moment_order=moment_order)

    @classmethod
    def student_t(cls, df: float, scale: float, moment_order: float = 2.0) -> "NoiseModel":
        return cls("student_t", df=df, scale=scale, moment_order=moment_order)

    @classmethod
    def none(cls) -> "NoiseModel":
        return cls("none")

    def sample(self, n: int, dimension: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "none":
            return np.zeros((n, dimension))
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma, (n, dimension))
        if self.kind == "student_t":
            return self.scale * rng.standard_t(self.df, (n, dimension))
        directions = rng.normal(size=(n, dimension))
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        radii = rng.uniform(size=(n, 1)) ** (1.0 / dimension)
        return self.radius * radii * directions / norms

    def mean_square_norm(self, dimension: int) -> float | None:
        """Analytic E||eta||^2 where known, else None."""
        if self.kind == "none":
            return 0.0
        if self.kind == "gaussian":
            return dimension * self.sigma ** 2
        if self.kind == "uniform_ball":
            return self.radius ** 2 * dimension / (dimension + 2.0)
        if self.df > 2.0:
            return dimension * self.scale ** 2 * self.df / (self.df - 2.0)
        return None

    def violations(self) -> list[str]:
        out = []
        if self.moment_order <= 1.0:
            out.append("noise: declared moment order must exceed 1")
        if self.kind == "student_t" and self.df <= self.moment_order:
            out.append(f"noise: student-t with df={self.df} has no finite moment of "
                       f"order {self.moment_order}")
        return out


# Trajectories ---------------------------------------------------------------

@dataclass
class Trajectory:
    """Full record of a run.

    ``states`` holds x_0..x_m, one more row than ``velocities``/``steps``/
    ``deltas``/``noises``; ``clock[i]`` is the elapsed algorithmic time before
    step i (clock[0] = 0).  ``status`` is "completed" or "escaped"; on escape,
    ``escape_index`` is the state index whose norm first exceeded the guard.
    """
    states: np.ndarray
    velocities: np.ndarray
    steps: np.ndarray
    deltas: np.ndarray
    noises: np.ndarray
    clock: np.ndarray
    status: str = "completed"
    escape_index: int | None = None
    escape_norm: float | None = None
    seed: int | None = None

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def n_steps(self) -> int:
        return self.velocities.shape[0]

    @property
    def elapsed(self) -> float:
        return float(self.clock[-1])


def _as_rng(seed) -> tuple[np.random.Generator, int | None]:
    if isinstance(seed, np.random.Generator):
        return seed, None
    return np.random.default_rng(seed), int(seed)


def sa_step(x, i: int, H: SetValuedMap, schedule: StepSchedule, noise: NoiseModel,
            delta_i: float, rng: np.random.Generator,
            rule: str = DEFAULT_SELECTION_RULE, eta=None):
    """One recursion step: x_next = x + eps_i * (y + eta) with y drawn from
    the delta_i-enlargement of H at x.

    Returns (x_next, v, eta) with v recomputed as (x_next - x)/eps_i so the
    definitional velocity identity holds bit-exactly.  ``eta`` may be forced
    for deterministic tests.
    """
    x = np.asarray(x, dtype=float)
    eps_i = schedule.step(i)
    if eps_i <= 0.0:
        raise ValueError("step size must be positive")
    if delta_i == 0.0:
        y = _select_from(H.evaluate(x), rule, rng)
    else:
        z = x + delta_i * uniform_ball(rng, H.dimension)
        y = _select_from(H.evaluate(z), rule, rng) + delta_i * uniform_ball(rng, H.dimension)
    if eta is None:
        eta = noise.sample(1, H.dimension, rng)[0]
    else:
        eta = np.asarray(eta, dtype=float)
    x_next = x + eps_i * (y + eta)
    v = (x_next - x) / eps_i
    return x_next, v, eta


def _finish(states, velocities, eps, deltas, noises, m, status, escape_index,
            escape_norm, seed_val):
    used = eps[:m]
    clock = np.empty(m + 1)
    clock[0] = 0.0
    np.cumsum(used, out=clock[1:])
    return Trajectory(states=states[:m + 1].copy(), velocities=velocities[:m].copy(),
                      steps=used.copy(), deltas=deltas[:m].copy(), noises=noises[:m].copy(),
                      clock=clock, status=status, escape_index=escape_index,
                      escape_norm=escape_norm, seed=seed_val)


def run_sa(x0, H: SetValuedMap, schedule: StepSchedule, noise: NoiseModel,
           delta_schedule: StepSchedule | None, n_steps: int, guard_radius: float,
           seed, rule: str = DEFAULT_SELECTION_RULE) -> Trajectory:
    """Iterate the recursion for ``n_steps`` steps or until escape.

    ``delta_schedule=None`` means delta_i = 0 throughout.  Equal seeds give
    bit-identical trajectories.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x0 = np.asarray(x0, dtype=float).copy()
    n = x0.shape[0]
    if guard_radius <= np.linalg.norm(x0):
        raise ValueError("guard radius must exceed ||x0||")
    rng, seed_val = _as_rng(seed)

    eps = schedule.values(n_steps)
    deltas = delta_schedule.values(n_steps) if delta_schedule is not None else np.zeros(n_steps)
    noises = noise.sample(n_steps, n, rng)
    states = np.empty((n_steps + 1, n))
    velocities = np.empty((n_steps, n))
    states[0] = x0

    evaluate = H.evaluate
    x = x0
    status, escape_index, escape_norm = "completed", None, None
    m = n_steps
    for i in range(n_steps):
        d = deltas[i]
        if d == 0.0:
            y = _select_from(evaluate(x), rule, rng)
        else:
            z = x + d * uniform_ball(rng, n)
            y = _select_from(evaluate(z), rule, rng) + d * uniform_ball(rng, n)
        e = eps[i]
        x_next = x + e * (y + noises[i])
        velocities[i] = (x_next - x) / e
        states[i + 1] = x_next
        sq = float(x_next @ x_next)
        if not math.isfinite(sq) or sq > guard_radius * guard_radius:
            status = "escaped"
            escape_index = i + 1
            escape_norm = math.sqrt(sq) if math.isfinite(sq) else math.inf
            m = i + 1
            break
        x = x_next
    return _finish(states, velocities, eps, deltas, noises, m, status,
                   escape_index, escape_norm, seed_val)


def run_sgd(f: MaxOfSmoothFunction, schedule: StepSchedule, noise: NoiseModel,
            n_steps: int, guard_radius: float, seed, x0,
            rule: str = DEFAULT_SELECTION_RULE) -> Trajectory:
    """Stochastic subgradient descent: the recursion driven by -subdiff(f),
    with zero enlargement."""
    H = negate(clarke_map(f))
    return run_sa(x0, H, schedule, noise, None, n_steps, guard_radius, seed, rule)


# Stochastic heavy ball ------------------------------------------------------

def run_shb(f: MaxOfSmoothFunction, alpha_schedule: StepSchedule,
            beta_schedule: StepSchedule, noise: NoiseModel, n_steps: int,
            guard_radius: float, seed, q0, p0=None,
            rule: str = DEFAULT_SELECTION_RULE) -> Trajectory:
    """Heavy-ball recursion on the (position, momentum) pair:

        p_{i+1} = (1 - beta_i) p_i - beta_i g_i + beta_i eta_{i+1},
        q_{i+1} = q_i + alpha_i p_{i+1},

    with g_i one element of subdiff(f)(q_i).  The recorded state is
    x_i = (q_i, p_i), the recorded step size is beta_i, and the recorded
    noise is (0, eta_{i+1}).
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    q = np.asarray(q0, dtype=float).copy()
    m_dim = q.shape[0]
    p = np.zeros(m_dim) if p0 is None else np.asarray(p0, dtype=float).copy()
    x0 = np.concatenate([q, p])
    if guard_radius <= np.linalg.norm(x0):
        raise ValueError("guard radius must exceed ||(q0, p0)||")
    rng, seed_val = _as_rng(seed)

    alphas = alpha_schedule.values(n_steps)
    betas = beta_schedule.values(n_steps)
    if np.any(betas > 1.0):
        raise ValueError("beta steps must not exceed 1")
    etas = noise.sample(n_steps, m_dim, rng)
    noises = np.zeros((n_steps, 2 * m_dim))
    noises[:, m_dim:] = etas
    states = np.empty((n_steps + 1, 2 * m_dim))
    velocities = np.empty((n_steps, 2 * m_dim))
    states[0] = x0

    status, escape_index, escape_norm = "completed", None, None
    m = n_steps
    for i in range(n_steps):
        g = _select_from(clarke_subdifferential(f, q), rule, rng)
        b = betas[i]
        p = (1.0 - b) * p - b * g + b * etas[i]
        q = q + alphas[i] * p
        states[i + 1, :m_dim] = q
        states[i + 1, m_dim:] = p
        velocities[i] = (states[i + 1] - states[i]) / b
        sq = float(states[i + 1] @ states[i + 1])
        if not math.isfinite(sq) or sq > guard_radius * guard_radius:
            status = "escaped"
            escape_index = i + 1
            escape_norm = math.sqrt(sq) if math.isfinite(sq) else math.inf
            m = i + 1
            break
    return _finish(states, velocities, betas, np.zeros(n_steps), noises, m,
                   status, escape_index, escape_norm, seed_val)


def shb_single_variable_coefficients(alphas, betas) -> tuple[np.ndarray, np.ndarray]:
    """Coefficients of the equivalent position-only recursion

        q_{i+1} = q_i + b_i (-g_i + eta_{i+1}) + a_i (q_i - q_{i-1}),

    where a_i = alpha_i (1 - beta_i) / alpha_{i-1} and b_i = alpha_i beta_i.
    Index 0 is NaN (the change of variables needs q_{i-1})."""
    alphas = np.asarray(alphas, dtype=float)
    betas = np.asarray(betas, dtype=float)
    a = np.full(alphas.shape, np.nan)
    a[1:] = alphas[1:] * (1.0 - betas[1:]) / alphas[:-1]
    b = alphas * betas
    return a, b


def shb_flow_map(f: MaxOfSmoothFunction, c: float) -> SetValuedMap:
    """The continuous-time companion of the heavy-ball recursion:
    H(q, p) = {-c p} x (subdiff(f)(q) - p)."""
    m_dim = f.dimension

    def ev(x):
        q, p = x[:m_dim], x[m_dim:]
        G = clarke_subdifferential(f, q).generators
        gens = np.empty((G.shape[0], 2 * m_dim))
        gens[:, :m_dim] = -c * p
        gens[:, m_dim:] = G - p
        return Polytope(gens, copy=False)

    return SetValuedMap(2 * m_dim, ev, name=f"heavy_ball_flow({f.name}, c={c})")


# Fictitious play ------------------------------------------------------------

def run_fictitious_play(game: "games_mod.Game", n_steps: int, seed,
                        xi0: Sequence | None = None) -> Trajectory:
    """Simultaneous fictitious play on the running average of past play.

    Each stage, every player draws a vertex of its best-response set against
    the opponents' averages (uniform tie-breaking) and the average updates as
    xi_{n+1} = xi_n + (x_{n+1} - xi_n)/(n+2), the initial profile counting as
    the stage-0 play.  The recorded state is the concatenated average, the
    step size is 1/(n+2) and the noise is zero.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng, seed_val = _as_rng(seed)
    counts = game.action_counts
    dim = int(sum(counts))
    if xi0 is None:
        parts = [np.full(k, 1.0 / k) for k in counts]
    else:
        parts = [np.asarray(s, dtype=float).copy() for s in xi0]
    for k, s in zip(counts, parts):
        if s.shape != (k,) or np.any(s < -1e-12) or abs(s.sum() - 1.0) > 1e-9:
            raise ValueError("initial profile must be a point on each action simplex")

    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(int)
    eps = 1.0 / (np.arange(n_steps, dtype=float) + 2.0)
    states = np.empty((n_steps + 1, dim))
    velocities = np.empty((n_steps, dim))
    xi = np.concatenate(parts)
    states[0] = xi

    for n in range(n_steps):
        play = np.zeros(dim)
        for i in range(game.n_players):
            opponents = [states[n, offsets[j]:offsets[j + 1]]
                         for j in range(game.n_players) if j != i]
            a = games_mod.strategy_draw(game, i, opponents, rng)
            play[offsets[i]:offsets[i + 1]] = a
        e = eps[n]
        xi_next = xi + e * (play - xi)
        velocities[n] = (xi_next - xi) / e
        states[n + 1] = xi_next
        xi = xi_next

    clock = np.empty(n_steps + 1)
    clock[0] = 0.0
    np.cumsum(eps, out=clock[1:])
    zeros = np.zeros((n_steps, dim))
    return Trajectory(states=states, velocities=velocities, steps=eps,
                      deltas=np.zeros(n_steps), noises=zeros, clock=clock,
                      status="completed", seed=seed_val)
