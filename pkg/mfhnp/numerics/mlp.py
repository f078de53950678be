"""Fully connected networks over Tensors."""

import logging

import numpy as np

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from ..exceptions import ConfigError, ShapeError
from .constants import ACTIVATIONS
from .tensor import Tensor, add, as_tensor, matmul, relu, tanh

_ACTIVATION_FUNCTIONS = {"relu": relu, "tanh": tanh}


@dataclass(eq=False)
class Mlp:
    """A multilayer perceptron, activation on hidden layers only.

    Attributes:
        layer_dims: Widths [in, hidden..., out]; at least two entries.
        activation: One of ACTIVATIONS.
        weights: One (fan_in, fan_out) Tensor per layer.
        biases: One (fan_out,) Tensor per layer.
    """

    layer_dims: List[int]
    activation: str = "relu"
    weights: List[Tensor] = field(default_factory=list)
    biases: List[Tensor] = field(default_factory=list)

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ShapeError(f"invalid layer dims {self.layer_dims}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation '{self.activation}', expected one of {ACTIVATIONS}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise ShapeError(f"expected {n_layers} weight and bias tensors")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_dims[i], self.layer_dims[i + 1])
            if w.shape != expected or b.shape != (expected[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} do not match {expected}")

    @classmethod
    def initialize(
        cls, layer_dims: Sequence[int], activation: str = "relu", rng: Optional[np.random.Generator] = None
    ) -> "Mlp":
        """Glorot-uniform weights and zero biases."""
        rng = rng if rng is not None else np.random.default_rng()
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out))))
            biases.append(Tensor(np.zeros(fan_out)))
        return cls(list(layer_dims), activation, weights, biases)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> List[Tensor]:
        """Weights and biases in declaration order: w0, b0, w1, b1, ..."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend([w, b])
        return params

    @property
    def n_parameters(self) -> int:
        return int(np.sum([p.size for p in self.parameters()]))

    def __call__(self, x) -> Tensor:
        h = as_tensor(x)
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ShapeError(f"mlp expects (n, {self.in_dim}) input, got {h.shape}")
        act = _ACTIVATION_FUNCTIONS[self.activation]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i < last:
                h = act(h)
        return h

    def header(self) -> dict:
        return {"layer_dims": list(self.layer_dims), "activation": self.activation}

    @classmethod
    def from_arrays(cls, header: dict, arrays: Sequence[np.ndarray]) -> "Mlp":
        arrays = list(arrays)
        logging.debug(f"restoring mlp {header['layer_dims']} from {len(arrays)} arrays")
        return cls(
            list(header["layer_dims"]),
            header["activation"],
            [Tensor(np.array(a)) for a in arrays[0::2]],
            [Tensor(np.array(a)) for a in arrays[1::2]],
        )
