"""Training settings and evaluation reports."""

import json

import pandas as pd

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List

from ..exceptions import ConfigError
from .constants import DEFAULT_EVAL_LATENT_SAMPLES, NLL_MODES, TRAIN_PRESETS


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    patience: int = 1000
    max_epochs: int = 2000
    seed: int = 0
    log_space_outputs: bool = False
    eval_latent_samples: int = DEFAULT_EVAL_LATENT_SAMPLES
    nll_mode: str = "moment"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.patience < 1:
            raise ConfigError("batch_size and patience must be at least 1")
        if self.max_epochs < 0 or self.seed < 0:
            raise ConfigError("max_epochs and seed must be non-negative")
        if self.eval_latent_samples < 1:
            raise ConfigError("eval_latent_samples must be at least 1")
        if self.nll_mode not in NLL_MODES:
            raise ConfigError(f"unknown nll_mode '{self.nll_mode}', expected one of {NLL_MODES}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        if name not in TRAIN_PRESETS:
            raise ConfigError(f"unknown training preset '{name}', expected one of {sorted(TRAIN_PRESETS)}")
        settings = dict(TRAIN_PRESETS[name])
        settings.update(overrides)
        return cls(**settings)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training settings: {sorted(unknown)}")
        return cls(**d)


@dataclass
class EvalReport:
    """Headline metrics and their per-scenario breakdown.

    The headline MAE and NLL are the means of the per-scenario entries.
    """

    mae: float
    nll: float
    per_scenario: List[Dict[str, Any]] = field(default_factory=list)
    config_digest: str = ""
    variant: str = ""
    aggregation: str = ""
    part: str = "test"
    nll_mode: str = "moment"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.per_scenario, columns=["scenario_id", "mae", "nll"])
        df.name = f"{self.variant}-{self.aggregation} {self.part} metrics per scenario"
        return df
