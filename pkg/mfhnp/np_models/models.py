"""Configuration, batches and parameter containers of the neural-process family."""

import logging

import numpy as np

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from ..aggregation import BaPrior
from ..exceptions import ConfigError, DatasetFormatError, ShapeError, VariantError
from ..numerics import Mlp, Tensor, assign_parameter_vector, parameter_vector, read_checkpoint, write_checkpoint
from .constants import AGGREGATIONS, DEFAULT_MC_SAMPLES, DEFAULT_SAMPLES, FIDELITIES, HIERARCHICAL_VARIANTS, VARIANTS


@dataclass
class NpConfig:
    """Architecture and estimator settings.

    Data widths are part of the config so a checkpoint can rebuild its
    networks without the dataset.
    """

    variant: str = "hnp-mean"
    aggregation: str = "ba"
    d_x_low: int = 1
    d_y_low: int = 1
    d_x_high: int = 1
    d_y_high: int = 1
    d_z: int = 32
    d_r: int = 32
    encoder_hidden: Tuple[int, ...] = (128, 128)
    decoder_hidden: Tuple[int, ...] = (128, 128, 128)
    activation: str = "relu"
    k_samples: int = DEFAULT_SAMPLES
    s_samples: int = DEFAULT_SAMPLES

    def __post_init__(self):
        self.encoder_hidden = tuple(int(w) for w in self.encoder_hidden)
        self.decoder_hidden = tuple(int(w) for w in self.decoder_hidden)
        self.validate()

    @classmethod
    def for_variant(cls, variant: str, **kwargs) -> "NpConfig":
        """Defaults per variant: nested Monte Carlo uses fewer draws per level."""
        if variant == "hnp-mc":
            kwargs.setdefault("k_samples", DEFAULT_MC_SAMPLES)
            kwargs.setdefault("s_samples", DEFAULT_MC_SAMPLES)
        return cls(variant=variant, **kwargs)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"unknown aggregation '{self.aggregation}', expected one of {AGGREGATIONS}")
        widths = [self.d_x_low, self.d_y_low, self.d_x_high, self.d_y_high, self.d_z, self.d_r]
        widths += list(self.encoder_hidden) + list(self.decoder_hidden)
        if any(w < 1 for w in widths):
            raise ConfigError("all widths must be at least 1")
        if self.k_samples < 1 or self.s_samples < 1:
            raise ConfigError("k_samples and s_samples must be at least 1")
        if self.variant == "hnp-as" and self.k_samples != self.s_samples:
            raise VariantError("ancestral sampling couples draws one to one: k_samples must equal s_samples")

    @property
    def hierarchical(self) -> bool:
        return self.variant in HIERARCHICAL_VARIANTS

    @property
    def summary_width(self) -> int:
        """Width of the low-level latent summary fed to the high encoder."""
        if not self.hierarchical:
            return 0
        return 2 * self.d_z if self.variant == "hnp-meanstd" else self.d_z

    def d_x(self, level: str) -> int:
        return self.d_x_low if level == "low" else self.d_x_high

    def d_y(self, level: str) -> int:
        return self.d_y_low if level == "low" else self.d_y_high

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["encoder_hidden"] = list(self.encoder_hidden)
        d["decoder_hidden"] = list(self.decoder_hidden)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "NpConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model settings: {sorted(unknown)}")
        return cls(**d)


def _as_points(a, width: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        return np.zeros((0, width))
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2 or a.shape[1] != width:
        raise ShapeError(f"{name} must be (n, {width}), got {a.shape}")
    return a


def _stack_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    return np.vstack([a, b])


@dataclass(eq=False)
class ContextTargetBatch:
    """Context and target points of one fidelity.

    Attributes:
        fidelity: "low" or "high".
        context_x, context_y, target_x, target_y: 2-D arrays, one row per point.
        context_y_low, target_y_low: Paired low-fidelity outputs for high points (MF-NP).
        target_in_context: The targets already belong to the context, so the
          context-and-target posterior is the context posterior.
    """

    fidelity: str
    context_x: np.ndarray
    context_y: np.ndarray
    target_x: np.ndarray
    target_y: np.ndarray
    context_y_low: Optional[np.ndarray] = None
    target_y_low: Optional[np.ndarray] = None
    target_in_context: bool = False

    def __post_init__(self):
        if self.fidelity not in FIDELITIES:
            raise ShapeError(f"unknown fidelity '{self.fidelity}'")
        x = np.asarray(self.context_x if np.size(self.context_x) else self.target_x, dtype=np.float64)
        y = np.asarray(self.context_y if np.size(self.context_y) else self.target_y, dtype=np.float64)
        d_x = x.shape[-1] if x.ndim else 1
        d_y = y.shape[-1] if y.ndim else 1
        self.context_x = _as_points(self.context_x, d_x, "context_x")
        self.context_y = _as_points(self.context_y, d_y, "context_y")
        self.target_x = _as_points(self.target_x, d_x, "target_x")
        self.target_y = _as_points(self.target_y, d_y, "target_y")
        if len(self.context_x) != len(self.context_y) or len(self.target_x) != len(self.target_y):
            raise ShapeError("every point needs exactly one x and one y")
        widths = set()
        for name, n in (("context_y_low", self.n_context), ("target_y_low", self.n_target)):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=np.float64)
            if value.ndim == 1:
                value = value.reshape(n, -1) if n else value.reshape(0, 0)
            if value.ndim != 2 or len(value) != n:
                raise ShapeError(f"{name} must hold one row per point")
            if n:
                widths.add(value.shape[1])
            setattr(self, name, value)
        if len(widths) > 1:
            raise ShapeError("context and target y_low widths differ")

    @classmethod
    def context_only(cls, fidelity: str, x, y, y_low=None) -> "ContextTargetBatch":
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return cls(
            fidelity,
            x,
            y,
            np.zeros((0,) + x.shape[1:]),
            np.zeros((0,) + y.shape[1:]),
            context_y_low=y_low,
            target_y_low=None if y_low is None else np.zeros((0,) + np.shape(y_low)[1:]),
        )

    @property
    def n_context(self) -> int:
        return len(self.context_x)

    @property
    def n_target(self) -> int:
        return len(self.target_x)

    @property
    def d_x(self) -> int:
        return self.context_x.shape[1]

    @property
    def d_y(self) -> int:
        return self.context_y.shape[1]

    @property
    def paired(self) -> bool:
        return self.context_y_low is not None and self.target_y_low is not None

    def points(self, include_target: bool) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
        """(x, y, y_low) of the context, or of context and target together."""
        if not include_target or self.target_in_context:
            return self.context_x, self.context_y, self.context_y_low
        y_low = _stack_rows(self.context_y_low, self.target_y_low) if self.paired else None
        return _stack_rows(self.context_x, self.target_x), _stack_rows(self.context_y, self.target_y), y_low


@dataclass(eq=False)
class NetworkBundle:
    """Networks of one fidelity level.

    Attributes:
        encoder: Per-point network from encoder inputs to a d_r representation.
        decoder: Network from decoder inputs to 2 * d_y (mean, raw variance).
        observation_head: BA only. Per-point map from r to (latent observation, raw variance).
        latent_head: MA only. Map from the averaged r to (mean, raw variance) of z.
    """

    encoder: Mlp
    decoder: Mlp
    observation_head: Optional[Mlp] = None
    latent_head: Optional[Mlp] = None

    @classmethod
    def build(cls, encoder_in: int, decoder_in: int, d_y: int, config: NpConfig, rng: np.random.Generator):
        encoder = Mlp.initialize([encoder_in, *config.encoder_hidden, config.d_r], config.activation, rng)
        decoder = Mlp.initialize([decoder_in, *config.decoder_hidden, 2 * d_y], config.activation, rng)
        if config.aggregation == "ba":
            return cls(encoder, decoder, observation_head=Mlp.initialize([config.d_r, 2 * config.d_z], config.activation, rng))
        return cls(
            encoder,
            decoder,
            latent_head=Mlp.initialize([config.d_r, config.d_r, 2 * config.d_z], config.activation, rng),
        )

    def networks(self) -> List[Mlp]:
        return [n for n in (self.encoder, self.observation_head, self.latent_head, self.decoder) if n is not None]

    def parameters(self) -> List[Tensor]:
        return [p for net in self.networks() for p in net.parameters()]


@dataclass(eq=False)
class MfhnpModel:
    """Parameters of one model of the family.

    `low` is present for hierarchical variants only; `ba_priors` holds one
    prior per level in use under BA. `metadata` rides along in checkpoints.
    """

    config: NpConfig
    high: NetworkBundle
    low: Optional[NetworkBundle] = None
    ba_priors: Dict[str, BaPrior] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: NpConfig, seed: int = 0) -> "MfhnpModel":
        rng = np.random.default_rng(seed)
        low = None
        if config.hierarchical:
            low = NetworkBundle.build(
                config.d_x_low + config.d_y_low, config.d_z + config.d_x_low, config.d_y_low, config, rng
            )
        high_in = config.d_x_high + config.d_y_high + config.summary_width
        high_decoder_in = config.d_z + config.d_x_high
        if config.variant == "mf":
            high_in += config.d_y_low
            high_decoder_in += config.d_y_low
        high = NetworkBundle.build(high_in, high_decoder_in, config.d_y_high, config, rng)
        priors = {}
        if config.aggregation == "ba":
            for level in (["low", "high"] if config.hierarchical else ["high"]):
                priors[level] = BaPrior.standard(config.d_z)
        model = cls(config, high, low, priors)
        logging.debug(f"initialized {config.variant}/{config.aggregation} model with {model.n_parameters} parameters")
        return model

    def bundle(self, level: str) -> NetworkBundle:
        bundle = self.low if level == "low" else self.high
        if bundle is None:
            raise VariantError(f"variant {self.config.variant} has no {level}-fidelity networks")
        return bundle

    def parameters(self) -> List[Tensor]:
        """All trainable tensors in declaration order: low, high, then priors."""
        params = []
        if self.low is not None:
            params.extend(self.low.parameters())
        params.extend(self.high.parameters())
        for level in FIDELITIES:
            if level in self.ba_priors:
                params.extend(self.ba_priors[level].parameters())
        return params

    @property
    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def save_model(path: str, model: MfhnpModel) -> None:
    header = {"config": model.config.to_dict(), "metadata": model.metadata}
    write_checkpoint(path, header, [p.value for p in model.parameters()])


def load_model(path: str) -> MfhnpModel:
    """Rebuild a model from a checkpoint, validating every parameter shape."""
    header, arrays = read_checkpoint(path)
    try:
        config = NpConfig.from_dict(header["config"])
    except (KeyError, TypeError) as e:
        raise DatasetFormatError(f"{path}: checkpoint lacks a model config ({e})")
    model = MfhnpModel.initialize(config)
    params = model.parameters()
    if len(arrays) != len(params):
        raise DatasetFormatError(f"{path}: expected {len(params)} arrays, found {len(arrays)}")
    for i, (p, a) in enumerate(zip(params, arrays)):
        if p.shape != a.shape:
            raise DatasetFormatError(f"{path}: array {i} has shape {a.shape}, expected {p.shape}")
    assign_parameter_vector(params, np.concatenate([a.reshape(-1) for a in arrays]) if arrays else np.zeros(0))
    model.metadata = dict(header.get("metadata", {}))
    logging.info(f"loaded {config.variant} model from {path}")
    return model


def model_parameter_vector(model: MfhnpModel) -> np.ndarray:
    return parameter_vector(model.parameters())
