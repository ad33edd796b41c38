"""Experiment configuration: defaults, flat overrides and validation."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .appendix_labs import BiasStudyConfig, PosteriorDemoConfig
from .bandit import BanditRunConfig, shifted_config
from .gridworld import GRID_SCHEMES, GridRunConfig, grid_scheme
from .uncertainty import canonical_scheme

OUT_ENV_VAR = "UPER_LAB_OUT"
DEFAULT_OUT = "results"

EXPERIMENTS = ("bandit", "bandit-shifted", "gridworld", "posterior-demo", "bias-study")

DEFAULT_SCHEMES = {
    "bandit": ("uniform", "td", "inverse_count", "uper", "oracle"),
    "bandit-shifted": ("uper", "uper_ens"),
    "gridworld": ("none", "uniform", "td", "uper"),
    "posterior-demo": ("ensemble",),
    "bias-study": ("forms",),
}

DEFAULT_SEEDS = {"bandit": 10, "bandit-shifted": 10, "gridworld": 100, "posterior-demo": 1, "bias-study": 1}

# keys that belong to the run itself rather than to the experiment module
RUN_KEYS = ("experiment", "schemes", "seeds", "seed_base", "root_seed", "workers", "out_dir")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when there is one."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


def module_defaults(experiment: str):
    if experiment == "bandit":
        return BanditRunConfig()
    if experiment == "bandit-shifted":
        return shifted_config()
    if experiment == "gridworld":
        return GridRunConfig()
    if experiment == "posterior-demo":
        return PosteriorDemoConfig()
    if experiment == "bias-study":
        return BiasStudyConfig()
    raise ConfigError(f"unknown experiment {experiment!r}; known: {', '.join(EXPERIMENTS)}", "experiment")


@dataclass
class ExperimentConfig:
    experiment: str
    schemes: tuple[str, ...]
    seeds: tuple[int, ...]
    params: Any
    root_seed: int = 0
    workers: int = 1
    out_dir: Path = field(default_factory=lambda: Path(os.environ.get(OUT_ENV_VAR, DEFAULT_OUT)))

    def resolved(self) -> dict[str, Any]:
        """Everything needed to reproduce the run, as plain JSON values."""
        params = {k: _jsonable(v) for k, v in dataclasses.asdict(self.params).items()}
        return {
            "experiment": self.experiment,
            "schemes": list(self.schemes),
            "seeds": list(self.seeds),
            "root_seed": self.root_seed,
            "workers": self.workers,
            "out_dir": str(self.out_dir),
            "params": params,
        }


def _jsonable(v: Any) -> Any:
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Convert ``value`` to the type of ``default``; strings are parsed, other values checked."""
    kind = type(default)
    if isinstance(value, str) and kind is not str:
        value = _parse_text(key, value, default)
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if isinstance(value, str):
            return value
    elif kind is tuple:
        if isinstance(value, (list, tuple)):
            inner = type(default[0]) if default else float
            return tuple(_coerce(key, x, inner()) for x in value)
    raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}", key)


def _parse_text(key: str, text: str, default: Any) -> Any:
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}", key)
    if isinstance(default, tuple):
        text = text.strip()
        if text.startswith("["):
            try:
                return json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{key}: bad list {text!r}", key) from exc
        return [_parse_text(key, part, default[0] if default else 0.0) for part in text.split(",") if part.strip()]
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {text!r}", key) from exc
    return text


def parse_assignments(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {item!r} is not of the form key=value", item)
        out[key.strip()] = value
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    for k, v in data.items():
        if isinstance(v, dict):
            raise ConfigError(f"{k}: nested objects are not allowed; the config is flat", k)
    return data


def parse_config(
    experiment: str | None,
    file_values: Mapping[str, Any] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> ExperimentConfig:
    """Merge module defaults, file values and overrides (which win), rejecting unknown keys."""
    merged: dict[str, Any] = dict(file_values or {})
    merged.update(overrides or {})
    experiment = experiment or merged.get("experiment")
    if not experiment:
        raise ConfigError("missing experiment id", "experiment")
    if merged.get("experiment", experiment) != experiment:
        raise ConfigError(f"experiment {merged['experiment']!r} in config conflicts with {experiment!r}", "experiment")
    params = module_defaults(experiment)
    known = {f.name for f in dataclasses.fields(params)}
    updates = {}
    for key, value in merged.items():
        if key in RUN_KEYS:
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for experiment {experiment!r}", key)
        updates[key] = _coerce(key, value, getattr(params, key))
    params = dataclasses.replace(params, **updates)
    _validate_params(params)

    schemes = _schemes(experiment, merged.get("schemes"))
    seeds = _seeds(experiment, merged.get("seeds"), merged.get("seed_base", 0))
    workers = _coerce("workers", merged.get("workers", 1), 1)
    if workers < 1:
        raise ConfigError("workers must be positive", "workers")
    root_seed = _coerce("root_seed", merged.get("root_seed", 0), 0)
    if root_seed < 0:
        raise ConfigError("root_seed must be nonnegative", "root_seed")
    out = merged.get("out_dir") or os.environ.get(OUT_ENV_VAR) or DEFAULT_OUT
    return ExperimentConfig(experiment, schemes, seeds, params, root_seed, workers, Path(out))


def _validate_params(params: Any) -> None:
    check = getattr(params, "validate", None)
    if check is None:
        return
    try:
        check()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _schemes(experiment: str, value: Any) -> tuple[str, ...]:
    if value is None:
        return DEFAULT_SCHEMES[experiment]
    names = value.split(",") if isinstance(value, str) else value
    if not isinstance(names, (list, tuple)) or not all(isinstance(n, str) for n in names):
        raise ConfigError(f"schemes: expected a list of names, got {value!r}", "schemes")
    names = [n.strip() for n in names if n.strip()]
    if not names:
        raise ConfigError("schemes: empty list", "schemes")
    try:
        if experiment.startswith("bandit"):
            return tuple(canonical_scheme(n) for n in names)
        if experiment == "gridworld":
            return tuple(grid_scheme(n) for n in names)
    except ValueError as exc:
        raise ConfigError(str(exc), "schemes") from exc
    if list(names) != list(DEFAULT_SCHEMES[experiment]):
        raise ConfigError(f"experiment {experiment!r} has no priority schemes", "schemes")
    return tuple(names)


def _seeds(experiment: str, value: Any, base: Any) -> tuple[int, ...]:
    base = _coerce("seed_base", base, 0)
    if value is None:
        value = DEFAULT_SEEDS[experiment]
    if isinstance(value, str):
        value = _parse_text("seeds", value, (0,)) if "," in value or value.startswith("[") else _parse_text("seeds", value, 0)
    if isinstance(value, int) and not isinstance(value, bool):
        if value < 1:
            raise ConfigError("seeds: count must be positive", "seeds")
        seeds = tuple(range(base, base + value))
    else:
        seeds = _coerce("seeds", value, (0,))
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds must be nonnegative", "seeds")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct", "seeds")
    return tuple(sorted(seeds))


__all__ = [
    "ConfigError",
    "EXPERIMENTS",
    "ExperimentConfig",
    "GRID_SCHEMES",
    "load_config_file",
    "parse_assignments",
    "parse_config",
]
