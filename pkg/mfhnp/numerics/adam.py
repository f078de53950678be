"""Adam with bias correction over flat parameter vectors."""

import numpy as np

from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

from ..exceptions import NonFiniteError, ShapeError
from .constants import ADAM_DEFAULTS
from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = ADAM_DEFAULTS["learning_rate"]
    beta1: float = ADAM_DEFAULTS["beta1"]
    beta2: float = ADAM_DEFAULTS["beta2"]
    epsilon: float = ADAM_DEFAULTS["epsilon"]
    step_count: int = 0
    first_moment: Optional[np.ndarray] = None
    second_moment: Optional[np.ndarray] = None

    @classmethod
    def zeros(cls, n_parameters: int, **hyperparameters) -> "AdamState":
        return cls(first_moment=np.zeros(n_parameters), second_moment=np.zeros(n_parameters), **hyperparameters)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> Tuple[np.ndarray, AdamState]:
    """One Adam update, applied to `params` and `state` in place.

    Args:
        params: Flat float64 parameter vector.
        grads: Gradient of the loss, same length as params.
        state: Moments and step count; moments are created on first use.

    Returns:
        The updated (params, state).
    """
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ShapeError(f"parameter vector {params.shape} and gradient {grads.shape} differ")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite gradient passed to adam_step")
    if state.first_moment is None or state.second_moment is None:
        state.first_moment = np.zeros_like(params)
        state.second_moment = np.zeros_like(params)
    if state.first_moment.shape != params.shape:
        raise ShapeError(f"adam moments {state.first_moment.shape} do not match parameters {params.shape}")

    state.step_count += 1
    t = state.step_count
    state.first_moment *= state.beta1
    state.first_moment += (1.0 - state.beta1) * grads
    state.second_moment *= state.beta2
    state.second_moment += (1.0 - state.beta2) * grads * grads
    m_hat = state.first_moment / (1.0 - state.beta1 ** t)
    v_hat = state.second_moment / (1.0 - state.beta2 ** t)
    params -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state


def parameter_vector(params: Sequence[Tensor]) -> np.ndarray:
    """Concatenate parameter values into a new flat vector."""
    if not params:
        return np.zeros(0)
    return np.concatenate([p.value.reshape(-1) for p in params])


def assign_parameter_vector(params: Sequence[Tensor], vector: np.ndarray) -> None:
    """Write a flat vector back into the parameter tensors, in order."""
    total = int(np.sum([p.size for p in params]))
    if vector.shape != (total,):
        raise ShapeError(f"expected a vector of {total} values, got {vector.shape}")
    offset = 0
    for p in params:
        p.value = vector[offset : offset + p.size].reshape(p.shape).copy()
        offset += p.size


def gradient_vector(params: Sequence[Tensor], grads: Mapping[Tensor, np.ndarray]) -> np.ndarray:
    """Flat gradient in parameter order; parameters without a gradient contribute zeros."""
    if not params:
        return np.zeros(0)
    return np.concatenate([np.asarray(grads.get(p, np.zeros(p.shape))).reshape(-1) for p in params])


class Adam:
    """Adam over a fixed, ordered list of parameter Tensors."""

    def __init__(self, parameters: Sequence[Tensor], learning_rate: float = ADAM_DEFAULTS["learning_rate"], **kwargs):
        self.parameters: List[Tensor] = list(parameters)
        self.state = AdamState.zeros(len(parameter_vector(self.parameters)), learning_rate=learning_rate, **kwargs)

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> None:
        flat = parameter_vector(self.parameters)
        adam_step(flat, gradient_vector(self.parameters, grads), self.state)
        assign_parameter_vector(self.parameters, flat)
