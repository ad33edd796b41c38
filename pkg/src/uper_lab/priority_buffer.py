"""Proportional prioritized replay backed by a sum tree.

Entries are sampled with probability ``P(i) = p_i / sum_k p_k`` where the
stored priority is ``p_i = (raw_i + epsilon_floor) ** alpha``. A companion
min-tree tracks the smallest stored priority so importance weights can be
normalised by the largest weight in the whole buffer, or alternatively by
the largest weight in the drawn batch.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


class SegmentTree:
    """Array-backed binary tree whose internal nodes combine their children.

    Leaves live at ``size - 1 + i`` where ``size`` is the capacity rounded up
    to a power of two. Parents are recomputed from both children on every
    write, so there is no drift from accumulated floating-point deltas.
    """

    def __init__(self, capacity: int, op: Callable[[float, float], float], neutral: float):
        if capacity < 1:
            raise ValueError(f"capacity must be positive, got {capacity}")
        size = 1
        while size < capacity:
            size *= 2
        self.capacity = capacity
        self.size = size
        self.op = op
        self.neutral = neutral
        self.nodes = [neutral] * (2 * size - 1)

    def __getitem__(self, i: int) -> float:
        return self.nodes[self.size - 1 + i]

    def __setitem__(self, i: int, value: float) -> None:
        nodes, op = self.nodes, self.op
        idx = self.size - 1 + i
        nodes[idx] = value
        while idx:
            idx = (idx - 1) // 2
            nodes[idx] = op(nodes[2 * idx + 1], nodes[2 * idx + 2])

    @property
    def root(self) -> float:
        return self.nodes[0]

    def leaves(self) -> list[float]:
        return self.nodes[self.size - 1 : self.size - 1 + self.capacity]


class SumTree(SegmentTree):
    def __init__(self, capacity: int):
        super().__init__(capacity, operator.add, 0.0)

    def find(self, mass: float) -> int:
        """Return the leaf whose cumulative-sum interval contains ``mass``.

        Zero-mass subtrees are never entered, so a rounding overshoot at the
        top of the range still lands on a live leaf.
        """
        nodes = self.nodes
        idx = 0
        last = len(nodes)
        while 2 * idx + 1 < last:
            left = 2 * idx + 1
            left_sum = nodes[left]
            if (mass < left_sum or nodes[left + 1] <= 0.0) and left_sum > 0.0:
                idx = left
            else:
                mass -= left_sum
                idx = left + 1
        return idx - (self.size - 1)


class MinTree(SegmentTree):
    def __init__(self, capacity: int):
        super().__init__(capacity, min, math.inf)


@dataclass(frozen=True)
class Transition:
    """One stored experience.

    ``mask`` holds the bootstrap membership bits (one per ensemble member);
    learners without an ensemble store an empty mask.
    """

    state: int
    action: int
    reward: float
    next_state: int
    terminal: bool = False
    mask: tuple[bool, ...] = ()


def draw_mask(n_ens: int, rng: np.random.Generator, p: float = 0.5) -> tuple[bool, ...]:
    """Bernoulli(p) bootstrap mask of length ``n_ens``."""
    return tuple(bool(b) for b in rng.random(n_ens) < p)


@dataclass(frozen=True)
class LinearSchedule:
    """Linear ramp from ``start`` to ``end`` over ``fraction * total_steps``, then flat."""

    start: float
    end: float
    total_steps: int
    fraction: float = 1.0

    def __call__(self, step: int) -> float:
        horizon = self.fraction * self.total_steps
        if horizon <= 0:
            return self.end
        frac = min(max(step / horizon, 0.0), 1.0)
        return self.start + frac * (self.end - self.start)


def constant(value: float) -> LinearSchedule:
    return LinearSchedule(value, value, total_steps=1)


class Sample(NamedTuple):
    entry_id: int
    transition: Transition
    weight: float


class BufferError(RuntimeError):
    """Raised on invalid buffer access (empty buffer, stale entry id)."""


@dataclass
class PriorityBuffer:
    """Ring buffer of transitions with proportional prioritized sampling.

    Entry ids increase monotonically with every insert, so an id that has been
    evicted is detectably stale rather than silently aliasing a newer entry.

    Args:
        capacity: Maximum number of live entries; the oldest is evicted first.
        alpha: Prioritisation exponent; 0 gives uniform sampling.
        beta_schedule: Importance-sampling exponent as a function of step.
        epsilon_floor: Added to every raw priority before exponentiation.
        normalize: ``"buffer"`` or ``"batch"``; scope of the max used to
            normalise importance weights.
    """

    capacity: int
    alpha: float = 0.7
    beta_schedule: Callable[[int], float] = field(default_factory=lambda: constant(1.0))
    epsilon_floor: float = 1e-3
    normalize: str = "buffer"

    def __post_init__(self) -> None:
        if self.normalize not in ("buffer", "batch"):
            raise ValueError(f"normalize must be 'buffer' or 'batch', got {self.normalize!r}")
        if self.capacity < 1:
            raise ValueError(f"capacity must be positive, got {self.capacity}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.epsilon_floor < 0:
            raise ValueError(f"epsilon_floor must be nonnegative, got {self.epsilon_floor}")
        self._sum = SumTree(self.capacity)
        self._min = MinTree(self.capacity)
        self._entries: list[Transition | None] = [None] * self.capacity
        self._raw = [0.0] * self.capacity
        self._next_id = 0
        self._size = 0
        self.max_raw_priority = 1.0

    def __len__(self) -> int:
        return self._size

    @staticmethod
    def _check(raw: float) -> None:
        if not math.isfinite(raw) or raw < 0:
            raise ValueError(f"raw priority must be finite and nonnegative, got {raw!r}")

    def _stored(self, raw: float) -> float:
        self._check(raw)
        return (raw + self.epsilon_floor) ** self.alpha

    def _slot(self, entry_id: int) -> int:
        if not (self._next_id - self._size <= entry_id < self._next_id):
            raise BufferError(f"entry {entry_id} is not live")
        return entry_id % self.capacity

    def _write(self, slot: int, raw: float) -> None:
        stored = self._stored(raw)
        self._raw[slot] = raw
        self._sum[slot] = stored
        self._min[slot] = stored
        if raw > self.max_raw_priority:
            self.max_raw_priority = raw

    def insert(self, transition: Transition, raw_priority: float) -> int:
        """Store ``transition`` and return its entry id."""
        self._check(raw_priority)
        entry_id = self._next_id
        slot = entry_id % self.capacity
        self._entries[slot] = transition
        self._write(slot, raw_priority)
        self._next_id += 1
        self._size = min(self._size + 1, self.capacity)
        return entry_id

    def update_priority(self, entry_id: int, raw_priority: float) -> None:
        self._write(self._slot(entry_id), raw_priority)

    def get(self, entry_id: int) -> Transition:
        return self._entries[self._slot(entry_id)]

    def live_ids(self) -> range:
        return range(self._next_id - self._size, self._next_id)

    def _id_of_slot(self, slot: int) -> int:
        # most recent id that maps to this slot
        base = self._next_id - 1
        return base - ((base - slot) % self.capacity)

    @property
    def total(self) -> float:
        return self._sum.root

    def stored_priority(self, entry_id: int) -> float:
        return self._sum[self._slot(entry_id)]

    def raw_priority(self, entry_id: int) -> float:
        return self._raw[self._slot(entry_id)]

    def probability(self, entry_id: int) -> float:
        return self._sum[self._slot(entry_id)] / self._sum.root

    def probabilities(self) -> np.ndarray:
        """Sampling probabilities of live entries, ordered by entry id."""
        ids = self.live_ids()
        p = np.array([self._sum[i % self.capacity] for i in ids])
        return p / p.sum()

    def weight(self, entry_id: int, step: int = 0) -> float:
        """Importance weight ``(N P(i))^-beta`` divided by the buffer-wide maximum."""
        beta = self.beta_schedule(step)
        return (self._sum[self._slot(entry_id)] / self._min.root) ** (-beta)

    def sample(self, batch: int, rng: np.random.Generator, step: int = 0) -> list[Sample]:
        """Draw ``batch`` entries independently (with replacement).

        Weights are ``(N P(i))^-beta`` divided by their maximum, taken over
        the whole buffer (``normalize="buffer"``) or over the drawn batch
        (``normalize="batch"``).
        """
        if self._size == 0:
            raise BufferError("cannot sample from an empty buffer")
        if batch < 1:
            raise ValueError(f"batch must be positive, got {batch}")
        total = self._sum.root
        beta = self.beta_schedule(step)
        slots = [self._sum.find(u * total) for u in rng.random(batch)]
        if self.normalize == "buffer":
            p_ref = self._min.root
        else:
            p_ref = min(self._sum[s] for s in slots)
        # the largest weight belongs to the least likely entry: w = (p / p_ref)^-beta
        return [
            Sample(self._id_of_slot(s), self._entries[s], (self._sum[s] / p_ref) ** (-beta))
            for s in slots
        ]


class SlotBuffer(PriorityBuffer):
    """Fixed-size, non-evicting buffer whose entries are overwritten in place.

    Used for the one-transition-per-arm bandit memory: each slot keeps its
    entry id forever and :meth:`replace` swaps the stored transition.
    """

    def insert(self, transition: Transition, raw_priority: float) -> int:
        if len(self) == self.capacity:
            raise BufferError("slot buffer is full; use replace()")
        return super().insert(transition, raw_priority)

    def replace(self, entry_id: int, transition: Transition) -> None:
        self._entries[self._slot(entry_id)] = transition
