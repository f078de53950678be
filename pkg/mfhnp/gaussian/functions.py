"""Diagonal Gaussians over Tensors.

Distributions may carry leading batch axes; the last axis is the event
dimension and densities and divergences sum over it.
"""

import logging

import numpy as np

from dataclasses import dataclass
from typing import Sequence, Union

from ..exceptions import DomainError, EmptyContextError, ShapeError
from ..numerics import (
    Tensor,
    add,
    as_tensor,
    divide,
    log,
    multiply,
    reduce_sum,
    softplus,
    sqrt,
    square,
    subtract,
)
from .constants import LOG_TWO_PI, VARIANCE_FLOOR


@dataclass(eq=False)
class DiagGaussian:
    mean: Tensor
    variance: Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.variance = as_tensor(self.variance)
        if self.mean.shape != self.variance.shape or self.mean.ndim == 0:
            raise ShapeError(f"mean {self.mean.shape} and variance {self.variance.shape} must share a non-scalar shape")
        if not np.all(np.isfinite(self.mean.value)):
            raise DomainError("gaussian mean must be finite")
        if not np.all(self.variance.value > 0.0) or not np.all(np.isfinite(self.variance.value)):
            raise DomainError("gaussian variance must be finite and strictly positive")

    @classmethod
    def from_raw(cls, mean, raw_variance) -> "DiagGaussian":
        """Variance = softplus(raw) + VARIANCE_FLOOR."""
        return cls(as_tensor(mean), add(softplus(raw_variance), VARIANCE_FLOOR))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def standard_deviation(self) -> Tensor:
        return sqrt(self.variance)

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(Tensor(self.mean.numpy()), Tensor(self.variance.numpy()))


def log_prob(dist: DiagGaussian, x) -> Tensor:
    """Log density of `x`, summed over the event axis."""
    x = as_tensor(x)
    if x.shape[-1:] != dist.mean.shape[-1:]:
        raise ShapeError(f"point of shape {x.shape} does not match event dim {dist.dim}")
    z = divide(square(subtract(x, dist.mean)), dist.variance)
    per_dim = add(add(log(dist.variance), z), LOG_TWO_PI)
    return multiply(reduce_sum(per_dim, axis=-1), -0.5)


def kl_divergence(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """KL(q || p) in closed form, summed over the event axis."""
    if q.mean.shape != p.mean.shape:
        raise ShapeError(f"cannot compare gaussians of shapes {q.mean.shape} and {p.mean.shape}")
    ratio = log(divide(p.variance, q.variance))
    spread = divide(add(q.variance, square(subtract(q.mean, p.mean))), p.variance)
    return multiply(reduce_sum(subtract(add(ratio, spread), 1.0), axis=-1), 0.5)


def sample(dist: DiagGaussian, rng: np.random.Generator, reparameterized: bool = True) -> Tensor:
    """One draw mean + sqrt(variance) * eps, eps ~ N(0, I).

    A reparameterized draw stays connected to the tape through mean and
    variance; otherwise it is a constant.
    """
    eps = rng.standard_normal(dist.mean.shape)
    if reparameterized:
        return add(dist.mean, multiply(sqrt(dist.variance), eps))
    return Tensor(dist.mean.value + np.sqrt(dist.variance.value) * eps)


def moment_match(components: Sequence[DiagGaussian]) -> DiagGaussian:
    """The single Gaussian with the first two moments of an equal-weight mixture.

    Computed on values, outside any tape.
    """
    if not components:
        raise EmptyContextError("moment_match needs at least one component")
    means = np.stack([c.mean.value for c in components])
    variances = np.stack([c.variance.value for c in components])
    mixture_mean = means.mean(axis=0)
    mixture_variance = variances.mean(axis=0) + np.square(means - mixture_mean).mean(axis=0)
    logging.debug(f"moment matched {len(components)} components")
    return DiagGaussian(Tensor(mixture_mean), Tensor(mixture_variance))


def mixture_log_prob(components: Sequence[DiagGaussian], x: Union[np.ndarray, Tensor]) -> np.ndarray:
    """Log density of `x` under the equal-weight mixture of `components`."""
    if not components:
        raise EmptyContextError("mixture_log_prob needs at least one component")
    logs = np.stack([log_prob(c, x).value for c in components])
    peak = logs.max(axis=0)
    return peak + np.log(np.exp(logs - peak).mean(axis=0))
