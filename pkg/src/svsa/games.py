"""Finite-action games on products of simplices.

Payoffs are multilinear in the mixed profiles; for two players they are
matrices U[i, j] = payoff under the pure profile (i, j).  Best responses of
a player are the vertex sets attaining the maximal per-pure-action payoff
within a tie tolerance, which for multilinear payoffs is the exact argmax
face of the simplex.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Polytope
from .maps import SetValuedMap

BR_TIE_TOL = 1e-9


@dataclass(frozen=True)
class Game:
    payoffs: tuple[np.ndarray, ...]
    name: str = ""
    br_tol: float = BR_TIE_TOL

    def __post_init__(self):
        payoffs = tuple(np.asarray(u, dtype=float) for u in self.payoffs)
        object.__setattr__(self, "payoffs", payoffs)
        m = len(payoffs)
        if m < 1:
            raise ValueError("a game needs at least one player")
        shape = payoffs[0].shape
        if len(shape) != m or any(u.shape != shape for u in payoffs):
            raise ValueError("each payoff tensor must have one axis per player, all equal shapes")

    @property
    def n_players(self) -> int:
        return len(self.payoffs)

    @property
    def action_counts(self) -> tuple[int, ...]:
        return self.payoffs[0].shape

    @property
    def profile_dimension(self) -> int:
        return int(sum(self.action_counts))

    def is_zero_sum(self) -> bool:
        total = sum(self.payoffs[1:], start=self.payoffs[0].copy())
        return bool(np.all(total == 0.0))

    def pure_action_payoffs(self, i: int, opponents: Sequence) -> np.ndarray:
        """Payoffs u_a of player i per pure action a against mixed opponents.

        ``opponents`` lists the other players' mixed strategies in player order.
        """
        tensor = np.moveaxis(self.payoffs[i], i, 0)
        for strategy in reversed([np.asarray(s, dtype=float) for s in opponents]):
            tensor = tensor @ strategy
        return tensor

    def payoff(self, i: int, profile: Sequence) -> float:
        """Multilinear payoff of player i under a full mixed profile."""
        own = np.asarray(profile[i], dtype=float)
        opponents = [profile[j] for j in range(self.n_players) if j != i]
        return float(own @ self.pure_action_payoffs(i, opponents))


def best_response_indices(game: Game, i: int, opponents: Sequence) -> np.ndarray:
    u = game.pure_action_payoffs(i, opponents)
    return np.flatnonzero(u >= u.max() - game.br_tol)


def best_response(game: Game, i: int, opponents: Sequence) -> Polytope:
    """Vertex generators of the best-response face of player i's simplex."""
    k = game.action_counts[i]
    idx = best_response_indices(game, i, opponents)
    gens = np.zeros((idx.size, k))
    gens[np.arange(idx.size), idx] = 1.0
    return Polytope(gens, copy=False)


def strategy_draw(game: Game, i: int, opponents: Sequence,
                  rng: np.random.Generator) -> np.ndarray:
    """A pure action supported on the best-response set, uniform over ties."""
    idx = best_response_indices(game, i, opponents)
    a = idx[int(rng.integers(idx.size))]
    out = np.zeros(game.action_counts[i])
    out[a] = 1.0
    return out


def split_profile(game: Game, xi: np.ndarray) -> list[np.ndarray]:
    offsets = np.concatenate([[0], np.cumsum(game.action_counts)]).astype(int)
    return [xi[offsets[i]:offsets[i + 1]] for i in range(game.n_players)]


def game_map(game: Game) -> SetValuedMap:
    """The averaged best-response displacement map on the concatenated profile:
    generators are (b^1 - xi^1, ..., b^m - xi^m) over all combinations of
    best-response vertices b^i."""
    counts = game.action_counts
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(int)

    def ev(xi):
        parts = [xi[offsets[i]:offsets[i + 1]] for i in range(game.n_players)]
        vertex_lists = []
        for i in range(game.n_players):
            opponents = [parts[j] for j in range(game.n_players) if j != i]
            vertex_lists.append(best_response_indices(game, i, opponents))
        combos = list(itertools.product(*vertex_lists))
        gens = np.empty((len(combos), xi.shape[0]))
        for r, combo in enumerate(combos):
            for i, a in enumerate(combo):
                seg = gens[r, offsets[i]:offsets[i + 1]]
                seg[:] = -parts[i]
                seg[a] += 1.0
        return Polytope(gens, copy=False)

    # Displacements live in a product of differences of simplices: bounded by
    # sqrt(2) per player, so a constant growth bound applies.
    bound = np.sqrt(2.0 * game.n_players)
    return SetValuedMap(game.profile_dimension, ev, growth_bound=float(bound),
                        name=f"best_response_displacement({game.name})")


# Built-in example games -----------------------------------------------------

def matching_pennies() -> Game:
    u1 = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return Game((u1, -u1), name="matching_pennies")


def generalized_rps(a: float = 1.0, b: float = 2.0) -> Game:
    """Cyclic three-action game: 0 on the diagonal, +a for a win, -b for a loss.

    With b > a the averaged best-response orbit spirals outward and play
    keeps cycling instead of converging.
    """
    if a <= 0.0 or b <= 0.0:
        raise ValueError("win and loss payoffs must be positive")
    m = np.array([[0.0, -b, a],
                  [a, 0.0, -b],
                  [-b, a, 0.0]])
    return Game((m, m.T), name=f"generalized_rps(a={a}, b={b})")


@dataclass(frozen=True)
class PotentialGame(Game):
    potential: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def potential_value(self, profile: Sequence) -> float:
        value = self.potential
        for strategy in reversed([np.asarray(s, dtype=float) for s in profile]):
            value = value @ strategy
        return float(value)


def potential_2x2() -> PotentialGame:
    """A 2x2 coordination game; both coordinated profiles are pure equilibria
    and the common payoff matrix is an exact potential."""
    u = np.array([[2.0, 0.0], [0.0, 1.0]])
    return PotentialGame((u, u.copy()), name="potential_2x2", potential=u.copy())


def builtin_games() -> dict[str, Callable[..., Game]]:
    return {
        "matching_pennies": matching_pennies,
        "generalized_rps": generalized_rps,
        "potential_2x2": potential_2x2,
    }


# JSON interchange -------------------------------------------------------------

def game_from_json(doc: dict | str) -> Game:
    """Load a game from {"players": m, "action_counts": [...],
    "payoff_tensors": [nested arrays]} (a dict or a JSON string)."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    try:
        players = int(doc["players"])
        counts = [int(k) for k in doc["action_counts"]]
        tensors = [np.asarray(t, dtype=float) for t in doc["payoff_tensors"]]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed game document: {exc}") from exc
    if len(counts) != players or len(tensors) != players:
        raise ValueError("player count does not match action_counts/payoff_tensors")
    expected = tuple(counts)
    for t in tensors:
        if t.shape != expected:
            raise ValueError(f"payoff tensor shape {t.shape} does not match {expected}")
    return Game(tuple(tensors), name=str(doc.get("name", "")))


def game_to_json(game: Game) -> dict:
    return {
        "name": game.name,
        "players": game.n_players,
        "action_counts": list(game.action_counts),
        "payoff_tensors": [u.tolist() for u in game.payoffs],
    }
