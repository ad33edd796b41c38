"""Noisy-gridworld Q-learning with Dyna-style replay.

The agent alternates blocks of direct interaction (epsilon-greedy Q-learning
on real steps, each transition pushed into a replay memory) with blocks of
planning updates replayed from that memory. The replay schemes differ only
in how a replayed transition's priority is written back:

* ``none``: no planning updates at all.
* ``uniform``: all priorities equal (plain experience replay).
* ``td``: ``|delta|``.
* ``uper``: information gain with ``delta**2 / (1 + C(s, a))`` as the
  epistemic term and the direct variance estimate ``V(s, a)`` as the
  aleatoric term.
* ``uper_count``: information gain with ``1 / (1 + C(s, a))`` as the
  epistemic term (ablation).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .environments import CANONICAL_MAP, NoisyGridworld, parse_map
from .priority_buffer import LinearSchedule, PriorityBuffer, Transition
from .records import RunRecord
from .seeding import substream
from .uncertainty import ALIASES, VarianceEstimator, info_gain, td_variance_update

log = logging.getLogger(__name__)

GRID_SCHEMES = ("none", "uniform", "td", "uper", "uper_count")


def grid_scheme(scheme: str) -> str:
    name = ALIASES.get(scheme, scheme)
    if name not in GRID_SCHEMES:
        raise ValueError(f"unknown gridworld scheme {scheme!r}; known: {list(GRID_SCHEMES)}")
    return name


@dataclass
class GridRunConfig:
    """Hyperparameters of one gridworld run.

    ``epsilon_convention`` says how ``epsilon`` is read: ``"greedy"`` means
    the agent acts greedily with probability ``epsilon``; ``"random"`` means
    it acts at random with probability ``epsilon``.

    ``insert_priority`` sets the priority of a new transition: ``"computed"``
    scores it under the active scheme from its direct-step TD error;
    ``"max"`` uses the largest raw priority seen so far. The beta schedule
    is indexed by planning step and spans ``beta_horizon`` planning steps.
    """

    map_text: str = CANONICAL_MAP
    goal_reward: float = 100.0
    step_reward: float = -0.1
    noise_std: float = 2.0
    timeout: int = 1000
    lr: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.95
    epsilon_convention: str = "greedy"
    capacity: int = 10_000
    direct_steps: int = 10
    planning_steps: int = 5
    episodes: int = 150
    alpha: float = 0.7
    beta_start: float = 0.5
    beta_end: float = 1.0
    beta_fraction: float = 0.4
    beta_horizon: int = 10_000
    epsilon_floor: float = 1e-3
    weight_normalization: str = "batch"
    aleatoric_floor: float = 1e-6
    insert_priority: str = "computed"
    threshold_fraction: float = 0.8

    def validate(self) -> None:
        if self.epsilon_convention not in ("greedy", "random"):
            raise ValueError("epsilon_convention must be 'greedy' or 'random'")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        for name in ("timeout", "capacity", "direct_steps", "episodes", "beta_horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.insert_priority not in ("max", "computed"):
            raise ValueError("insert_priority must be 'max' or 'computed'")
        if self.planning_steps < 0:
            raise ValueError("planning_steps must be nonnegative")

    @property
    def greedy_prob(self) -> float:
        return self.epsilon if self.epsilon_convention == "greedy" else 1.0 - self.epsilon

    def make_env(self) -> NoisyGridworld:
        return parse_map(
            self.map_text,
            goal_reward=self.goal_reward,
            step_reward=self.step_reward,
            noise_std=self.noise_std,
            timeout=self.timeout,
        )


def greedy_action(q_row: np.ndarray) -> int:
    """Argmax with ties going to the lowest action index."""
    return int(np.argmax(q_row))


def q_target(reward: float, next_row: np.ndarray, gamma: float, terminal: bool) -> float:
    return reward if terminal else reward + gamma * float(next_row.max())


@dataclass
class GridAgent:
    config: GridRunConfig
    scheme: str
    q_table: np.ndarray
    counts: np.ndarray
    var_est: VarianceEstimator
    buffer: PriorityBuffer
    rng: np.random.Generator
    direct_count: int = 0
    planning_count: int = 0
    replay_states: list[int] = field(default_factory=list)

    @classmethod
    def create(cls, config: GridRunConfig, env: NoisyGridworld, scheme: str, rng: np.random.Generator) -> "GridAgent":
        config.validate()
        shape = (env.n_states, env.n_actions)
        horizon = config.beta_horizon
        buffer = PriorityBuffer(
            capacity=config.capacity,
            alpha=config.alpha,
            beta_schedule=LinearSchedule(config.beta_start, config.beta_end, horizon, config.beta_fraction),
            epsilon_floor=config.epsilon_floor,
            normalize=config.weight_normalization,
        )
        return cls(
            config=config,
            scheme=grid_scheme(scheme),
            q_table=np.zeros(shape),
            counts=np.zeros(shape, dtype=np.int64),
            var_est=VarianceEstimator.zeros(*shape, rate=config.lr),
            buffer=buffer,
            rng=rng,
        )

    def act(self, state: int) -> int:
        if self.rng.random() < self.config.greedy_prob:
            return greedy_action(self.q_table[state])
        return int(self.rng.integers(self.q_table.shape[1]))

    def td_error(self, t: Transition) -> float:
        target = q_target(t.reward, self.q_table[t.next_state], self.config.gamma, t.terminal)
        return target - self.q_table[t.state, t.action]

    def replay_priority(self, t: Transition, delta: float) -> float:
        if self.scheme == "uniform":
            return 1.0
        if self.scheme == "td":
            return abs(delta)
        c = self.counts[t.state, t.action]
        a_hat = self.var_est.v_table[t.state, t.action]
        e_proxy = delta * delta / (1.0 + c) if self.scheme == "uper" else 1.0 / (1.0 + c)
        return info_gain(e_proxy, a_hat, self.config.aleatoric_floor)


def direct_step(agent: GridAgent, env: NoisyGridworld, state: int, env_rng: np.random.Generator) -> Transition:
    """One real environment step with learning; returns the stored transition."""
    cfg = agent.config
    action = agent.act(state)
    nxt, reward, done = env.step(state, action, env_rng)
    t = Transition(state, action, reward, nxt, terminal=done)
    delta = agent.td_error(t)
    agent.q_table[state, action] += cfg.lr * delta
    agent.counts[state, action] += 1
    next_action = greedy_action(agent.q_table[nxt])
    td_variance_update(agent.var_est, state, action, nxt, next_action, delta, cfg.gamma, terminal=done)
    if agent.scheme != "none":
        if cfg.insert_priority == "max":
            agent.buffer.insert(t, agent.buffer.max_raw_priority)
        else:
            agent.buffer.insert(t, agent.replay_priority(t, delta))
    agent.direct_count += 1
    return t


def planning_step(agent: GridAgent) -> None:
    """Replay one stored transition, update Q with its importance weight and refresh its priority."""
    if len(agent.buffer) == 0:
        log.debug("planning step skipped: empty buffer")
        return
    (entry, t, weight), = agent.buffer.sample(1, agent.rng, agent.planning_count)
    delta = agent.td_error(t)
    agent.q_table[t.state, t.action] += agent.config.lr * weight * delta
    agent.buffer.update_priority(entry, agent.replay_priority(t, delta))
    agent.replay_states.append(t.state)
    agent.planning_count += 1


def evaluate(agent: GridAgent, env: NoisyGridworld, rng: np.random.Generator) -> float:
    """Undiscounted return of one greedy episode."""
    state, total = env.start_state, 0.0
    for _ in range(env.timeout):
        nxt, reward, done = env.step(state, greedy_action(agent.q_table[state]), rng)
        total += reward
        if done:
            break
        state = nxt
    return total


def train_episode(agent: GridAgent, env: NoisyGridworld, env_rng: np.random.Generator) -> int:
    """One training episode; planning blocks follow every ``direct_steps`` real steps."""
    cfg = agent.config
    state = env.start_state
    for step in range(1, env.timeout + 1):
        t = direct_step(agent, env, state, env_rng)
        if agent.scheme != "none" and agent.direct_count % cfg.direct_steps == 0:
            for _ in range(cfg.planning_steps):
                planning_step(agent)
        if t.terminal:
            return step
        state = t.next_state
    return env.timeout


@dataclass
class GridRun:
    scheme: str
    seed: int
    returns: np.ndarray
    episode_lengths: np.ndarray
    heatmap: np.ndarray
    optimal_return: float
    noisy_mask: np.ndarray

    def records(self) -> list[RunRecord]:
        return [
            RunRecord(self.seed, ep, self.scheme, {"test_return": float(r)})
            for ep, r in enumerate(self.returns, start=1)
        ]


def sampling_heatmap(states: Sequence[int], env: NoisyGridworld) -> np.ndarray:
    """Replay-sample counts per source cell, shaped ``(height, width)``."""
    counts = np.bincount(np.asarray(states, dtype=np.int64), minlength=env.n_states)
    return counts.reshape(env.height, env.width)


def noisy_mass_fraction(heatmap: np.ndarray, noisy_mask: np.ndarray) -> float:
    """Fraction of replay samples drawn from transitions leaving a noisy cell."""
    total = heatmap.sum()
    return float(heatmap[noisy_mask].sum() / total) if total else 0.0


def episodes_to_threshold(returns: Sequence[float], threshold: float) -> int:
    """1-based index of the first evaluation reaching ``threshold``; ``len + 1`` if never."""
    hits = np.flatnonzero(np.asarray(returns) >= threshold)
    return int(hits[0]) + 1 if hits.size else len(returns) + 1


def run_gridworld(config: GridRunConfig, scheme: str, seed: int, root_seed: int = 0) -> GridRun:
    env = config.make_env()
    agent = GridAgent.create(config, env, scheme, substream(root_seed, seed, "agent", grid_scheme(scheme)))
    env_rng = substream(root_seed, seed, "env")
    eval_rng = substream(root_seed, seed, "eval")
    returns, lengths = [], []
    for _ in range(config.episodes):
        lengths.append(train_episode(agent, env, env_rng))
        returns.append(evaluate(agent, env, eval_rng))
    noisy = np.array([env.is_noisy(s) for s in range(env.n_states)]).reshape(env.height, env.width)
    return GridRun(
        scheme=agent.scheme,
        seed=seed,
        returns=np.array(returns),
        episode_lengths=np.array(lengths),
        heatmap=sampling_heatmap(agent.replay_states, env),
        optimal_return=env.optimal_return(),
        noisy_mask=noisy,
    )


def run_summary(run: GridRun, threshold_fraction: float = 0.8) -> dict[str, float]:
    threshold = threshold_fraction * run.optimal_return
    return {
        "episodes_to_threshold": float(episodes_to_threshold(run.returns, threshold)),
        "final_return": float(run.returns[-1]),
        "mean_return": float(run.returns.mean()),
        "noisy_sample_fraction": noisy_mass_fraction(run.heatmap, run.noisy_mask),
    }


def smooth(values: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    x = np.asarray(values, dtype=float)
    c = np.cumsum(np.insert(x, 0, 0.0))
    n = np.arange(1, x.size + 1)
    lo = np.maximum(n - window, 0)
    return (c[n] - c[lo]) / (n - lo)
