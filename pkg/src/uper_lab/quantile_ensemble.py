"""Tabular ensembles of quantile-regression return-distribution estimators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

INIT_STYLES = ("uniform_sorted", "evenly_spaced")


def midpoint_taus(n_q: int) -> np.ndarray:
    """Quantile midpoints ``(2i - 1) / (2 n_q)`` for ``i = 1..n_q``."""
    return (2.0 * np.arange(1, n_q + 1) - 1.0) / (2.0 * n_q)


@dataclass
class QuantileTable:
    """Quantile values indexed ``(member, state, action, quantile)``."""

    theta: np.ndarray

    def __post_init__(self) -> None:
        if self.theta.ndim != 4:
            raise ValueError(f"theta must be 4-d (member, state, action, quantile), got shape {self.theta.shape}")
        self.tau = midpoint_taus(self.n_q)

    @property
    def n_ens(self) -> int:
        return self.theta.shape[0]

    @property
    def n_states(self) -> int:
        return self.theta.shape[1]

    @property
    def n_actions(self) -> int:
        return self.theta.shape[2]

    @property
    def n_q(self) -> int:
        return self.theta.shape[3]

    def at(self, state: int, action: int) -> np.ndarray:
        """View of shape ``(n_ens, n_q)`` for one state-action pair."""
        return self.theta[:, state, action, :]


@dataclass(frozen=True)
class LearningSchedule:
    """Exponentially annealed step size ``base_rate * 2 ** (-t / half_life)``."""

    base_rate: float = 0.005
    half_life: float = 40_000

    def __post_init__(self) -> None:
        if self.base_rate <= 0 or self.half_life <= 0:
            raise ValueError("base_rate and half_life must be positive")

    def __call__(self, step: int) -> float:
        return self.base_rate * 2.0 ** (-step / self.half_life)


def init_table(
    n_ens: int,
    n_q: int,
    n_states: int,
    n_actions: int,
    rng: np.random.Generator,
    init_style: str = "uniform_sorted",
    low: float = -1.0,
    high: float = 1.0,
) -> QuantileTable:
    """Build a quantile table with every ``(member, s, a)`` initialised on ``[low, high]``.

    ``uniform_sorted`` draws i.i.d. uniform values and sorts them along the
    quantile axis; ``evenly_spaced`` places them at the tau-quantiles of the
    uniform distribution (no randomness).
    """
    for name, n in (("n_ens", n_ens), ("n_q", n_q), ("n_states", n_states), ("n_actions", n_actions)):
        if n < 1:
            raise ValueError(f"{name} must be positive, got {n}")
    shape = (n_ens, n_states, n_actions, n_q)
    if init_style == "uniform_sorted":
        theta = np.sort(rng.uniform(low, high, size=shape), axis=-1)
    elif init_style == "evenly_spaced":
        theta = np.broadcast_to(low + (high - low) * midpoint_taus(n_q), shape).copy()
    else:
        raise ValueError(f"unknown init_style {init_style!r}; expected one of {INIT_STYLES}")
    return QuantileTable(theta)


def pinball_loss(theta: np.ndarray, z: float, tau: np.ndarray) -> np.ndarray:
    """Elementwise ``rho_tau(z - theta)`` with ``rho_tau(u) = u (tau - 1{u < 0})``."""
    u = z - theta
    return u * (tau - (u < 0))


def _check_target(z: float) -> None:
    if not math.isfinite(z):
        raise ValueError(f"target sample must be finite, got {z!r}")


def qr_update(table: QuantileTable, member: int, state: int, action: int, z: float, rate: float) -> None:
    """One stochastic subgradient step of the quantile-regression loss toward sample ``z``."""
    _check_target(z)
    row = table.theta[member, state, action]
    row += rate * (table.tau - (z < row))


def masked_update(
    table: QuantileTable,
    state: int,
    action: int,
    z: float,
    rate: float,
    mask: Sequence[bool] | np.ndarray,
) -> None:
    """Apply :func:`qr_update` to every member whose mask bit is set.

    Members are updated simultaneously; quantiles may cross, no projection
    is applied.
    """
    _check_target(z)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (table.n_ens,):
        raise ValueError(f"mask length {mask.shape} does not match ensemble size {table.n_ens}")
    if not mask.any():
        return
    block = table.theta[mask, state, action]
    block += rate * (table.tau - (z < block))
    table.theta[mask, state, action] = block


def q_value(table: QuantileTable, state: int, action: int) -> float:
    """Mean over members and quantiles."""
    return float(table.theta[:, state, action].mean())
