"""Epistemic/aleatoric uncertainty estimates and the priorities built from them.

All functions taking ``theta`` expect the ``(n_ens, n_q)`` block of quantile
values for one state-action pair (see :meth:`QuantileTable.at`). Variances
are population variances over the full member and quantile index sets.
Nothing here assumes the quantiles are sorted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

DEFAULT_ALEATORIC_FLOOR = 1e-6


def aleatoric(theta: np.ndarray) -> float:
    """Variance over quantiles of the ensemble-mean quantile values."""
    return float(theta.mean(axis=0).var())


def epistemic(theta: np.ndarray) -> float:
    """Mean over quantiles of the across-member variance."""
    if theta.shape[0] < 2:
        raise ValueError("ensemble disagreement needs at least two members")
    return float(theta.var(axis=0).mean())


def target_distance(theta: np.ndarray, target: float) -> float:
    """Squared distance between ``target`` and the grand mean of ``theta``."""
    _check_finite(target)
    return (target - float(theta.mean())) ** 2


def target_total(theta: np.ndarray, target: float) -> float:
    """Mean squared error to ``target`` over all members and quantiles."""
    _check_finite(target)
    return float(((target - theta) ** 2).mean())


def bootstrapped_target_total(
    theta: np.ndarray, reward: float, gamma: float, next_theta: np.ndarray
) -> float:
    """Target total uncertainty against one-step bootstrapped quantile targets.

    Averages ``(reward + gamma * next_theta[tau'] - theta[tau])**2`` over the
    online quantiles ``tau``, the target quantiles ``tau'`` and the members.
    ``next_theta`` is either shared by all members (1-d, ``(n_q',)``) or
    paired member-by-member with ``theta`` (2-d, ``(n_ens, n_q')``).
    """
    targets = reward + gamma * np.asarray(next_theta, dtype=float)
    if targets.ndim == 1:
        diff = targets[None, None, :] - theta[:, :, None]
    elif targets.ndim == 2:
        if targets.shape[0] != theta.shape[0]:
            raise ValueError("paired targets need one row per ensemble member")
        diff = targets[:, None, :] - theta[:, :, None]
    else:
        raise ValueError(f"next_theta must be 1-d or 2-d, got shape {targets.shape}")
    return float((diff**2).mean())


def info_gain(epistemic_delta: float, aleatoric_var: float, floor: float = DEFAULT_ALEATORIC_FLOOR) -> float:
    """Entropy reduction ``0.5 * ln(1 + E / (A + floor))`` in nats."""
    if epistemic_delta < 0 or aleatoric_var < 0:
        raise ValueError("uncertainties must be nonnegative")
    if epistemic_delta == 0:
        return 0.0
    return 0.5 * math.log1p(epistemic_delta / (aleatoric_var + floor))


@dataclass(frozen=True)
class UncertaintyReport:
    aleatoric: float
    epistemic: float
    target_distance: float
    target_epistemic: float
    target_total: float
    info_gain: float


def report(theta: np.ndarray, target: float, floor: float = DEFAULT_ALEATORIC_FLOOR) -> UncertaintyReport:
    """All per-transition uncertainty quantities for learning target ``target``."""
    _check_finite(target)
    mean_q = theta.mean(axis=0)
    a_hat = float(mean_q.var())
    e_hat = float(theta.var(axis=0).mean())
    d2 = (target - float(mean_q.mean())) ** 2
    e_delta = d2 + e_hat
    return UncertaintyReport(
        aleatoric=a_hat,
        epistemic=e_hat,
        target_distance=d2,
        target_epistemic=e_delta,
        target_total=e_delta + a_hat,
        info_gain=info_gain(e_delta, a_hat, floor),
    )


class Decomposition(NamedTuple):
    total: float
    aleatoric: float
    epistemic: float


def deup_check(samples: np.ndarray, prediction: float) -> Decomposition:
    """Excess-risk split of a predictor's squared error on target samples.

    Returns the empirical total ``mean((x - q)^2)``, the target variance and
    the squared bias ``(q - mean x)^2``; total = aleatoric + epistemic.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two target samples")
    mean = float(x.mean())
    return Decomposition(
        total=float(((x - prediction) ** 2).mean()),
        aleatoric=float(((x - mean) ** 2).mean()),
        epistemic=(prediction - mean) ** 2,
    )


@dataclass
class VarianceEstimator:
    """TD(0)-style estimate of return variance using ``delta**2`` as meta-reward."""

    v_table: np.ndarray
    rate: float

    @classmethod
    def zeros(cls, n_states: int, n_actions: int, rate: float) -> "VarianceEstimator":
        return cls(np.zeros((n_states, n_actions)), rate)


def td_variance_update(
    est: VarianceEstimator,
    state: int,
    action: int,
    next_state: int,
    next_action: int,
    td_error: float,
    gamma: float,
    terminal: bool = False,
) -> float:
    """Move ``V(s, a)`` toward ``delta**2 + gamma**2 V(s', a')``; returns the new value.

    The estimate is clamped at zero.
    """
    _check_finite(td_error)
    v = est.v_table
    bootstrap = 0.0 if terminal else v[next_state, next_action]
    new = v[state, action] + est.rate * (td_error * td_error + gamma * gamma * bootstrap - v[state, action])
    v[state, action] = max(new, 0.0)
    return v[state, action]


# scheme id -> context fields it needs
SCHEMES: dict[str, tuple[str, ...]] = {
    "uniform": (),
    "td": ("td_error",),
    "inverse_count": ("count",),
    "oracle": ("oracle_distance",),
    "uper": ("epistemic_delta", "aleatoric"),
    "uper_ens": ("epistemic", "aleatoric"),
    "epistemic": ("epistemic_delta",),
    "epistemic_ens": ("epistemic",),
    "total": ("total",),
    "total_ens": ("epistemic", "aleatoric"),
    "ratio_eu": ("epistemic_delta", "total"),
    "ratio_e2u": ("epistemic_delta", "total"),
    "ratio_e3u": ("epistemic_delta", "total"),
    "ratio_eu_ens": ("epistemic", "aleatoric"),
    "ratio_e2u_ens": ("epistemic", "aleatoric"),
    "ratio_e3u_ens": ("epistemic", "aleatoric"),
}

ALIASES = {"er": "uniform", "per": "td", "info_gain": "uper", "count": "inverse_count"}


class MissingContextError(KeyError):
    def __init__(self, scheme: str, name: str):
        super().__init__(f"scheme {scheme!r} needs context field {name!r}")
        self.field = name


def canonical_scheme(scheme: str) -> str:
    name = ALIASES.get(scheme, scheme)
    if name not in SCHEMES:
        raise ValueError(f"unknown priority scheme {scheme!r}; known: {sorted(SCHEMES)}")
    return name


def context_from_report(rep: UncertaintyReport) -> dict[str, float]:
    return {
        "epistemic": rep.epistemic,
        "epistemic_delta": rep.target_epistemic,
        "aleatoric": rep.aleatoric,
        "total": rep.target_total,
    }


def priority(scheme: str, context: Mapping[str, float], floor: float = DEFAULT_ALEATORIC_FLOOR) -> float:
    """Raw (pre-floor, pre-exponent) replay priority under ``scheme``.

    ``_ens`` variants use the ensemble disagreement alone in place of the
    target epistemic uncertainty, with ``E + A`` as their total.
    """
    name = canonical_scheme(scheme)
    for key in SCHEMES[name]:
        if key not in context:
            raise MissingContextError(name, key)
    c = context
    if name == "uniform":
        return 1.0
    if name == "td":
        return abs(c["td_error"])
    if name == "inverse_count":
        return 1.0 / math.sqrt(1.0 + c["count"])
    if name == "oracle":
        return abs(c["oracle_distance"])
    if name == "uper":
        return info_gain(c["epistemic_delta"], c["aleatoric"], floor)
    if name == "uper_ens":
        return info_gain(c["epistemic"], c["aleatoric"], floor)
    if name == "epistemic":
        return c["epistemic_delta"]
    if name == "epistemic_ens":
        return c["epistemic"]
    if name == "total":
        return c["total"]
    if name == "total_ens":
        return c["epistemic"] + c["aleatoric"]
    power = {"eu": 1, "e2u": 2, "e3u": 3}[name.split("_")[1]]
    if name.endswith("_ens"):
        e, u = c["epistemic"], c["epistemic"] + c["aleatoric"]
    else:
        e, u = c["epistemic_delta"], c["total"]
    return e**power / (u + floor)


def _check_finite(x: float) -> None:
    if not math.isfinite(x):
        raise ValueError(f"value must be finite, got {x!r}")
