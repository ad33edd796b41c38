"""Conal-bandit replay experiment.

A quantile ensemble learns each arm's reward distribution purely from a
replay memory that holds one transition per arm. Every step one arm is
replayed (chosen by prioritized sampling), the ensemble is updated toward
its stored reward, the arm is pulled again and the fresh reward replaces the
stored one, and the arm's priority is recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .environments import SHIFTED_MEANS, ConalBandit
from .priority_buffer import LinearSchedule, SlotBuffer, Transition
from .quantile_ensemble import LearningSchedule, QuantileTable, init_table, masked_update
from .records import RunRecord
from .seeding import substream
from .uncertainty import canonical_scheme, context_from_report, priority, report


@dataclass
class BanditRunConfig:
    n_arms: int = 5
    mean_rewards: tuple[float, ...] = (2.0,)
    sigma_max: float = 2.0
    sigma_min: float = 0.1
    n_quantiles: int = 30
    n_ens: int = 30
    train_steps: int = 200_000
    lr_base: float = 0.005
    lr_half_life: float = 40_000
    alpha: float = 0.7
    beta_start: float = 0.5
    beta_end: float = 1.0
    beta_fraction: float = 0.4
    epsilon_floor: float = 1e-3
    weight_normalization: str = "batch"
    aleatoric_floor: float = 1e-6
    member_update_prob: float = 0.5
    init_style: str = "uniform_sorted"
    init_low: float = -1.0
    init_high: float = 1.0
    record_interval: int = 1000

    def validate(self) -> None:
        for name in ("n_arms", "n_quantiles", "n_ens", "train_steps", "record_interval"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if len(self.mean_rewards) not in (1, self.n_arms):
            raise ValueError("mean_rewards needs one value or one per arm")
        if not 0 < self.member_update_prob <= 1:
            raise ValueError("member_update_prob must lie in (0, 1]")

    def arm_means(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.mean_rewards, dtype=float), (self.n_arms,)).copy()


def shifted_config(**overrides) -> BanditRunConfig:
    return BanditRunConfig(mean_rewards=SHIFTED_MEANS, **overrides)


def record_columns(n_arms: int) -> list[str]:
    cols = ["true_mse"]
    for prefix in ("p_arm", "ehat_arm", "ahat_arm", "delta2_arm"):
        cols += [f"{prefix}_{a}" for a in range(n_arms)]
    return cols


@dataclass
class BanditState:
    """Everything a run mutates; exposed for tests and diagnostics."""

    config: BanditRunConfig
    scheme: str
    env: ConalBandit
    table: QuantileTable
    buffer: SlotBuffer
    counts: np.ndarray
    rng: np.random.Generator
    step: int = 0
    records: list[RunRecord] = field(default_factory=list)

    def stored_reward(self, arm: int) -> float:
        return self.buffer.get(arm).reward

    def arm_priority(self, arm: int) -> float:
        cfg = self.config
        theta = self.table.at(0, arm)
        target = self.stored_reward(arm)
        rep = report(theta, target, cfg.aleatoric_floor)
        ctx = context_from_report(rep)
        ctx["count"] = float(self.counts[arm])
        ctx["oracle_distance"] = float(self.env.mean_rewards[arm] - theta.mean())
        if self.scheme == "td":
            ctx["td_error"] = float(np.abs(target - theta.mean(axis=1)).mean())
        return priority(self.scheme, ctx, cfg.aleatoric_floor)

    def true_mse(self) -> float:
        q = self.table.theta[:, 0].mean(axis=(0, 2))
        return float(((q - self.env.mean_rewards) ** 2).mean())


def make_bandit(config: BanditRunConfig, scheme: str, seed: int, root_seed: int = 0) -> BanditState:
    """Build the world for one (scheme, seed) cell and fill the memory with one pull per arm.

    Environment rewards and the initial table depend only on the seed, so all
    schemes sharing a seed start from the same table and see the same reward
    sequence per arm.
    """
    config.validate()
    scheme = canonical_scheme(scheme)
    env = ConalBandit(
        substream(root_seed, seed, "env"),
        n_arms=config.n_arms,
        mean_rewards=config.arm_means(),
        sigma_max=config.sigma_max,
        sigma_min=config.sigma_min,
    )
    table = init_table(
        config.n_ens,
        config.n_quantiles,
        1,
        config.n_arms,
        substream(root_seed, seed, "init"),
        config.init_style,
        config.init_low,
        config.init_high,
    )
    buffer = SlotBuffer(
        capacity=config.n_arms,
        alpha=config.alpha,
        beta_schedule=LinearSchedule(config.beta_start, config.beta_end, config.train_steps, config.beta_fraction),
        epsilon_floor=config.epsilon_floor,
        normalize=config.weight_normalization,
    )
    state = BanditState(
        config=config,
        scheme=scheme,
        env=env,
        table=table,
        buffer=buffer,
        counts=np.zeros(config.n_arms, dtype=np.int64),
        rng=substream(root_seed, seed, "agent", scheme),
    )
    for arm in range(config.n_arms):
        buffer.insert(Transition(0, arm, env.pull(arm), 0, terminal=True), 1.0)
    for arm in range(config.n_arms):
        buffer.update_priority(arm, state.arm_priority(arm))
    return state


def bandit_step(state: BanditState, lr: LearningSchedule) -> int:
    """Replay one arm, learn from its stored reward, refresh it; returns the arm."""
    cfg = state.config
    (entry, transition, weight), = state.buffer.sample(1, state.rng, state.step)
    arm = transition.action
    mask = state.rng.random(cfg.n_ens) < cfg.member_update_prob
    masked_update(state.table, 0, arm, transition.reward, lr(state.step) * weight, mask)
    state.counts[arm] += 1
    state.buffer.replace(entry, Transition(0, arm, state.env.pull(arm), 0, terminal=True))
    state.buffer.update_priority(entry, state.arm_priority(arm))
    state.step += 1
    return arm


def snapshot(state: BanditState, seed: int) -> RunRecord:
    n = state.config.n_arms
    metrics = {"true_mse": state.true_mse()}
    probs = state.buffer.probabilities()
    reps = [report(state.table.at(0, a), state.stored_reward(a), state.config.aleatoric_floor) for a in range(n)]
    for a in range(n):
        metrics[f"p_arm_{a}"] = float(probs[a])
    for a in range(n):
        metrics[f"ehat_arm_{a}"] = reps[a].epistemic
    for a in range(n):
        metrics[f"ahat_arm_{a}"] = reps[a].aleatoric
    for a in range(n):
        metrics[f"delta2_arm_{a}"] = reps[a].target_distance
    return RunRecord(seed=seed, step=state.step, scheme=state.scheme, metrics=metrics)


def run_bandit(
    config: BanditRunConfig, scheme: str, seed: int, root_seed: int = 0
) -> list[RunRecord]:
    """Train for ``config.train_steps`` steps; one record every ``record_interval`` steps."""
    state = make_bandit(config, scheme, seed, root_seed)
    lr = LearningSchedule(config.lr_base, config.lr_half_life)
    for _ in range(config.train_steps):
        bandit_step(state, lr)
        if state.step % config.record_interval == 0:
            state.records.append(snapshot(state, seed))
    return state.records


def arm_probability_trace(records: Sequence[RunRecord]) -> np.ndarray:
    """Array ``(n_records, n_arms)`` of the per-arm sampling probabilities."""
    if not records:
        raise ValueError("no records")
    n = sum(1 for k in records[0].metrics if k.startswith("p_arm_"))
    return np.array([[r.metrics[f"p_arm_{a}"] for a in range(n)] for r in records])


def metric_trace(records: Iterable[RunRecord], name: str) -> np.ndarray:
    return np.array([r.metrics[name] for r in records])


def final_metrics(records: Sequence[RunRecord]) -> dict[str, float]:
    last = records[-1]
    return {"final_true_mse": last.metrics["true_mse"], "cumulative_true_mse": float(metric_trace(records, "true_mse").sum())}
