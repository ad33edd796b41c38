"""Conal multi-armed bandit and the noisy-reward gridworld."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SHIFTED_MEANS = (3.0, 2.75, 2.5, 2.25, 2.0)


class ConalBandit:
    """Arms share a (possibly per-arm) mean; the reward std grows linearly with the arm index.

    Each arm draws from its own child generator, so the k-th pull of an arm
    yields the same reward regardless of how pulls of other arms interleave.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        n_arms: int = 5,
        mean_rewards: float | Sequence[float] = 2.0,
        sigma_max: float = 2.0,
        sigma_min: float = 0.1,
    ):
        if n_arms < 2:
            raise ValueError("a conal bandit needs at least two arms")
        if sigma_max < 0 or sigma_min < 0:
            raise ValueError("noise scales must be nonnegative")
        means = np.broadcast_to(np.asarray(mean_rewards, dtype=float), (n_arms,)).copy()
        self.n_arms = n_arms
        self.mean_rewards = means
        self.sigma_max = sigma_max
        self.sigma_min = sigma_min
        self.sigmas = np.arange(n_arms) * sigma_max / (n_arms - 1) + sigma_min
        self._arm_rngs = rng.spawn(n_arms)

    def sigma(self, arm: int) -> float:
        return float(self.sigmas[arm])

    def pull(self, arm: int) -> float:
        if not 0 <= arm < self.n_arms:
            raise IndexError(f"arm {arm} out of range [0, {self.n_arms})")
        eta = self._arm_rngs[arm].standard_normal()
        return float(self.mean_rewards[arm] + eta * self.sigmas[arm])


# action id -> (d_row, d_col)
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
ACTION_NAMES = ("up", "down", "left", "right")

CANONICAL_MAP = """\
S.........
..NNN.....
..NNN.....
..NNN.....
..........
..........
..........
..........
..........
.........G
"""


class MapError(ValueError):
    pass


@dataclass
class NoisyGridworld:
    """Deterministic moves on a rectangular grid; some cells pay Gaussian noise.

    Cells are numbered ``row * width + col``. The reward depends on the cell
    landed in: ``goal_reward`` for the goal (terminal), a ``N(0, noise_std^2)``
    draw for a noisy cell (every time, including bumping a wall while inside
    one), ``step_reward`` otherwise. Moves off the grid leave the agent in place.
    """

    width: int = 10
    height: int = 10
    start: tuple[int, int] = (0, 0)
    goal: tuple[int, int] = (9, 9)
    noisy_cells: frozenset[tuple[int, int]] = field(default_factory=frozenset)
    goal_reward: float = 100.0
    step_reward: float = -0.1
    noise_std: float = 2.0
    timeout: int = 1000

    def __post_init__(self) -> None:
        for name, cell in (("start", self.start), ("goal", self.goal)):
            if not self._inside(cell):
                raise MapError(f"{name} {cell} lies outside the {self.height}x{self.width} grid")
        self.noisy_cells = frozenset(tuple(c) for c in self.noisy_cells)
        self._noisy = np.zeros(self.n_states, dtype=bool)
        for cell in self.noisy_cells:
            if not self._inside(cell):
                raise MapError(f"noisy cell {cell} lies outside the grid")
            self._noisy[self.index(cell)] = True
        self.start_state = self.index(self.start)
        self.goal_state = self.index(self.goal)
        self._next = np.empty((self.n_states, 4), dtype=np.int64)
        for s in range(self.n_states):
            r, c = divmod(s, self.width)
            for a, (dr, dc) in enumerate(MOVES):
                cell = (r + dr, c + dc)
                self._next[s, a] = self.index(cell) if self._inside(cell) else s
        self._next_list = self._next.tolist()
        self._noisy_list = self._noisy.tolist()

    @property
    def n_states(self) -> int:
        return self.width * self.height

    n_actions = 4

    def _inside(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def index(self, cell: tuple[int, int]) -> int:
        return cell[0] * self.width + cell[1]

    def cell(self, state: int) -> tuple[int, int]:
        return divmod(state, self.width)

    def is_noisy(self, state: int) -> bool:
        return self._noisy_list[state]

    def step(self, state: int, action: int, rng: np.random.Generator) -> tuple[int, float, bool]:
        if state == self.goal_state:
            raise RuntimeError("cannot step from the terminal goal state")
        nxt = self._next_list[state][action]
        if nxt == self.goal_state:
            return nxt, self.goal_reward, True
        if self._noisy_list[nxt]:
            return nxt, self.noise_std * rng.standard_normal(), False
        return nxt, self.step_reward, False

    def expected_reward(self, next_state: int) -> float:
        if next_state == self.goal_state:
            return self.goal_reward
        return 0.0 if self._noisy_list[next_state] else self.step_reward

    def optimal_return(self) -> float:
        """Best expected undiscounted return from the start (Dijkstra on per-entry costs)."""
        # all non-goal entry rewards are <= 0, so costs are nonnegative
        costs = {s: -self.expected_reward(s) for s in range(self.n_states) if s != self.goal_state}
        best = {self.start_state: 0.0}
        heap = [(0.0, self.start_state)]
        while heap:
            d, s = heapq.heappop(heap)
            if s == self.goal_state:
                return self.goal_reward - d
            if d > best.get(s, np.inf):
                continue
            for a in range(4):
                n = self._next_list[s][a]
                nd = d + (0.0 if n == self.goal_state else costs[n])
                if nd < best.get(n, np.inf):
                    best[n] = nd
                    heapq.heappush(heap, (nd, n))
        raise MapError("goal is unreachable from start")

    def shortest_path_length(self) -> int:
        return abs(self.goal[0] - self.start[0]) + abs(self.goal[1] - self.start[1])


def parse_map(text: str, **kwargs) -> NoisyGridworld:
    """Build a gridworld from rows of ``S`` (start), ``G`` (goal), ``N`` (noisy), ``.`` (empty)."""
    rows = [line.strip() for line in text.strip().splitlines() if line.strip()]
    if not rows:
        raise MapError("map is empty")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise MapError("map is not rectangular")
    start = goal = None
    noisy = set()
    for i, row in enumerate(rows):
        for j, ch in enumerate(row):
            if ch == "S":
                if start is not None:
                    raise MapError("map has more than one S")
                start = (i, j)
            elif ch == "G":
                if goal is not None:
                    raise MapError("map has more than one G")
                goal = (i, j)
            elif ch == "N":
                noisy.add((i, j))
            elif ch != ".":
                raise MapError(f"unexpected map character {ch!r} at row {i}, column {j}")
    if start is None:
        raise MapError("map has no start cell S")
    if goal is None:
        raise MapError("map has no goal cell G")
    return NoisyGridworld(
        width=width, height=len(rows), start=start, goal=goal, noisy_cells=frozenset(noisy), **kwargs
    )


def load_map(path: str | Path, **kwargs) -> NoisyGridworld:
    return parse_map(Path(path).read_text(), **kwargs)


def canonical_gridworld(**kwargs) -> NoisyGridworld:
    return parse_map(CANONICAL_MAP, **kwargs)
