"""Two standalone studies of the uncertainty estimates.

Posterior demo: an ensemble of quantile regressors learning the mean of a
Gaussian stream is compared with the exact conjugate Gaussian posterior
over that mean.

Bias study: a constant offset ``C`` added to the reducible uncertainty acts
like a temperature on the replay distribution. For several priority forms
built from ``E = eta + C`` and ``U = E + beta`` this module measures the
entropy of the resulting distribution and how far it strays from the
unbiased ``C = 0`` distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .quantile_ensemble import LearningSchedule, QuantileTable, masked_update
from .seeding import substream


@dataclass
class GaussianPosterior:
    """Conjugate posterior ``N(mu, var)`` over the mean of Gaussian data with known variance."""

    mu: float = 0.0
    var: float = 1.0

    def __post_init__(self) -> None:
        if not self.var > 0:
            raise ValueError(f"posterior variance must be positive, got {self.var}")

    def observe(self, x: float, data_var: float) -> None:
        s2 = self.var
        self.mu = (data_var * self.mu + s2 * x) / (data_var + s2)
        self.var = s2 * data_var / (data_var + s2)

    def entropy(self) -> float:
        return 0.5 * math.log(2.0 * math.pi * math.e * self.var)


@dataclass
class PosteriorDemoConfig:
    n_members: int = 50
    n_quantiles: int = 30
    steps: int = 200_000
    data_mean: float = 2.0
    data_std: float = 1.0
    prior_mean: float = 0.0
    prior_var: float = 1.0
    member_update_prob: float = 0.5
    lr_base: float = 0.005
    lr_half_life: float = 40_000
    record_interval: int = 100


@dataclass
class PosteriorTrace:
    """Per-record series; ``step[k]`` counts the observations consumed so far."""

    step: np.ndarray
    ens_epistemic: np.ndarray
    ens_aleatoric: np.ndarray
    bayes_var: np.ndarray
    delta_theta: np.ndarray

    COLUMNS = ("step", "ens_epistemic", "ens_aleatoric", "bayes_var", "delta_theta")

    def rows(self) -> list[dict[str, object]]:
        return [
            {"step": int(n), "ens_epistemic": float(e), "ens_aleatoric": float(a), "bayes_var": float(v), "delta_theta": float(d)}
            for n, e, a, v, d in zip(self.step, self.ens_epistemic, self.ens_aleatoric, self.bayes_var, self.delta_theta)
        ]


def run_posterior_demo(config: PosteriorDemoConfig, seed: int = 0, root_seed: int = 0) -> PosteriorTrace:
    """Feed one sample stream to both the ensemble and the exact posterior.

    Each member starts as a point mass (all quantiles equal) at its own draw
    from the prior, so the initial disagreement matches the prior variance.
    Records are taken at step 0 and every ``record_interval`` steps.
    """
    cfg = config
    if cfg.n_members < 2 or cfg.steps < 0 or cfg.record_interval < 1:
        raise ValueError("need at least two members, nonnegative steps and a positive record interval")
    init_rng = substream(root_seed, seed, "init")
    data_rng = substream(root_seed, seed, "data")
    mask_rng = substream(root_seed, seed, "mask")
    draws = cfg.prior_mean + math.sqrt(cfg.prior_var) * init_rng.standard_normal(cfg.n_members)
    theta = np.repeat(draws[:, None], cfg.n_quantiles, axis=1)[:, None, None, :].copy()
    table = QuantileTable(theta)
    block = table.at(0, 0)
    posterior = GaussianPosterior(cfg.prior_mean, cfg.prior_var)
    data_var = cfg.data_std**2
    lr = LearningSchedule(cfg.lr_base, cfg.lr_half_life)

    cols: dict[str, list[float]] = {c: [] for c in PosteriorTrace.COLUMNS}

    def record(n: int) -> None:
        mean_q = block.mean(axis=0)
        cols["step"].append(n)
        cols["ens_epistemic"].append(float(block.var(axis=0).mean()))
        cols["ens_aleatoric"].append(float(mean_q.var()))
        cols["bayes_var"].append(posterior.var)
        cols["delta_theta"].append(abs(cfg.data_mean - float(mean_q.mean())))

    record(0)
    xs = cfg.data_mean + cfg.data_std * data_rng.standard_normal(cfg.steps)
    for t in range(cfg.steps):
        x = float(xs[t])
        mask = mask_rng.random(cfg.n_members) < cfg.member_update_prob
        masked_update(table, 0, 0, x, lr(t), mask)
        posterior.observe(x, data_var)
        if (t + 1) % cfg.record_interval == 0:
            record(t + 1)
    return PosteriorTrace(**{k: np.asarray(v) for k, v in cols.items()})


# form id -> exponent m on E in E^m / U; "E" is the plain (vanilla) form
FORMS = {"E": 0, "E/U": 1, "E2/U": 2, "E3/U": 3}
DISTRIBUTIONS = ("uniform", "halfnormal")


def log_grid(low: float = 1e-3, high: float = 10.0, n: int = 50) -> tuple[float, ...]:
    return tuple(float(c) for c in np.logspace(math.log10(low), math.log10(high), n))


@dataclass
class BiasStudyConfig:
    """``eta`` (reducible uncertainty) and ``beta`` (noise) are drawn from ``Uniform(0, b)`` or ``|N(0, b^2)|``."""

    n: int = 100_000
    eta_dist: str = "uniform"
    eta_scale: float = 1.0
    beta_dist: str = "uniform"
    beta_scale: float = 1.0
    c_grid: tuple[float, ...] = field(default_factory=log_grid)
    forms: tuple[str, ...] = tuple(FORMS)

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError("n must be positive")
        for d in (self.eta_dist, self.beta_dist):
            if d not in DISTRIBUTIONS:
                raise ValueError(f"unknown distribution {d!r}; known: {DISTRIBUTIONS}")
        for f in self.forms:
            if f not in FORMS:
                raise ValueError(f"unknown form {f!r}; known: {list(FORMS)}")
        if any(c < 0 for c in self.c_grid):
            raise ValueError("bias values must be nonnegative")


def draw(dist: str, scale: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if dist == "uniform":
        return rng.uniform(0.0, scale, n)
    if dist == "halfnormal":
        return np.abs(rng.normal(0.0, scale, n))
    raise ValueError(f"unknown distribution {dist!r}")


def form_priorities(form: str, eta: np.ndarray, beta: np.ndarray, c: float) -> np.ndarray:
    """Normalised replay distribution of ``form`` under bias ``c``."""
    e = eta + c
    m = FORMS[form]
    p = e if m == 0 else e**m / (e + beta)
    total = p.sum()
    if not total > 0:
        raise ValueError(f"all priorities are zero for form {form!r} at C={c}")
    return p / total


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats; zero-probability entries contribute nothing."""
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


BIAS_COLUMNS = ("form", "C", "seed", "entropy", "dev_mean", "dev_std")


def run_bias_study(config: BiasStudyConfig, seed: int = 0, root_seed: int = 0) -> list[dict[str, object]]:
    """One row per (form, C): entropy and deviation from the unbiased vanilla distribution."""
    config.validate()
    rng = substream(root_seed, seed, "bias")
    eta = draw(config.eta_dist, config.eta_scale, config.n, rng)
    beta = draw(config.beta_dist, config.beta_scale, config.n, rng)
    ideal = form_priorities("E", eta, beta, 0.0)
    rows = []
    for form in config.forms:
        for c in config.c_grid:
            p = form_priorities(form, eta, beta, c)
            dev = np.abs(p - ideal)
            rows.append(
                {"form": form, "C": c, "seed": seed, "entropy": entropy(p), "dev_mean": float(dev.mean()), "dev_std": float(dev.std())}
            )
    return rows


def entropy_curve(rows: Sequence[dict[str, object]], form: str) -> tuple[np.ndarray, np.ndarray]:
    """``(C, entropy)`` arrays for one form, sorted by C."""
    pts = sorted((float(r["C"]), float(r["entropy"])) for r in rows if r["form"] == form)
    c, h = zip(*pts)
    return np.array(c), np.array(h)
