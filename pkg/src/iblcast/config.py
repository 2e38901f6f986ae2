"""Run configuration: defaults, JSON config files, and flag overrides.

Precedence is flags over config-file values over defaults. Every command
derives all of its randomness from the single run seed.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .ibl import DEFAULT_DECAY, DEFAULT_MISMATCH, DEFAULT_NOISE, IblParams, WeightProfile
from .lstm import LstmConfig
from .sim import CohortSpec


@dataclass
class IblSettings:
    decay_d: float = DEFAULT_DECAY
    mismatch_mu: float = DEFAULT_MISMATCH
    noise_sigma: float = DEFAULT_NOISE
    temperature_tau: float | None = None

    def params(self, weights: WeightProfile | None = None) -> IblParams:
        kwargs = dict(
            decay_d=self.decay_d,
            mismatch_mu=self.mismatch_mu,
            noise_sigma=self.noise_sigma,
            temperature_tau=self.temperature_tau,
        )
        if weights is not None:
            kwargs["weights"] = weights
        return IblParams(**kwargs)


@dataclass
class RunConfig:
    seed: int = 7
    train_weeks: int = 25
    test_weeks: int = 14
    budget_fraction: float = 0.03
    threshold: float = 0.25
    horizon: int = 14
    counterfactual_mode: str = "lstm_generator"
    input_csv: str | None = None
    output_dir: str = "runs"
    cluster_k: int = 3
    quality_k_min: int = 2
    quality_k_max: int = 8
    cohort: CohortSpec = field(default_factory=CohortSpec)
    ibl: IblSettings = field(default_factory=IblSettings)
    lstm: LstmConfig = field(default_factory=LstmConfig)

    def __post_init__(self):
        if not 0.0 < self.budget_fraction < 1.0:
            raise ConfigurationError("budget_fraction must lie in (0, 1)")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigurationError("threshold must lie in (0, 1)")
        if self.train_weeks < 2 or self.test_weeks < 1 or self.horizon < 1:
            raise ConfigurationError("train/test weeks and horizon must be positive")


_NESTED = {"cohort": CohortSpec, "ibl": IblSettings, "lstm": LstmConfig}


def config_to_dict(config: RunConfig) -> dict:
    out = dataclasses.asdict(config)
    out["cohort"]["mix"] = list(out["cohort"]["mix"])
    return out


def config_from_dict(data: dict) -> RunConfig:
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED:
            cls = _NESTED[key]
            valid = {f.name for f in dataclasses.fields(cls)}
            extra = set(value) - valid
            if extra:
                raise ConfigurationError(
                    f"unknown {key} config keys: {sorted(extra)}"
                )
            if key == "cohort" and "mix" in value:
                value = dict(value, mix=tuple(value["mix"]))
            kwargs[key] = cls(**value)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return config_from_dict(data)


def write_config(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
