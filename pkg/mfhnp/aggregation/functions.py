"""Permutation-invariant aggregation of per-point latent observations.

Mean aggregation (MA) averages encodings and maps the average to a latent
Gaussian. Bayesian aggregation (BA) treats each encoding as a noisy
Gaussian observation of the latent and folds them into a Gaussian prior.
Both sort the rows into a canonical order first, so reordering the input
gives bit-identical results.
"""

import logging

import numpy as np

from dataclasses import dataclass
from typing import List, Optional, Sequence

from ..exceptions import DomainError, EmptyContextError, ShapeError
from ..gaussian import VARIANCE_FLOOR, DiagGaussian
from ..numerics import (
    Mlp,
    Tensor,
    add,
    as_tensor,
    columns,
    concatenate,
    divide,
    multiply,
    reduce_mean,
    reduce_sum,
    reshape,
    softplus,
    subtract,
    take,
)


@dataclass(eq=False)
class LatentObservation:
    """Per-point encodings, one row per observation.

    Attributes:
        r: (N, d) encodings.
        obs_variance: (N, d) observation variances, required for BA.
    """

    r: Tensor
    obs_variance: Optional[Tensor] = None

    def __post_init__(self):
        self.r = as_tensor(self.r)
        if self.r.ndim != 2:
            raise ShapeError(f"encodings must be (N, d), got {self.r.shape}")
        if self.obs_variance is not None:
            self.obs_variance = as_tensor(self.obs_variance)
            if self.obs_variance.shape != self.r.shape:
                raise ShapeError(f"variances {self.obs_variance.shape} do not match encodings {self.r.shape}")
            if not np.all(self.obs_variance.value > 0.0):
                raise DomainError("observation variances must be strictly positive")

    def __len__(self) -> int:
        return self.r.shape[0]

    @property
    def dim(self) -> int:
        return self.r.shape[1]

    @classmethod
    def stack(cls, observations: Sequence["LatentObservation"]) -> "LatentObservation":
        r = concatenate([o.r for o in observations], axis=0)
        if all(o.obs_variance is not None for o in observations):
            return cls(r, concatenate([o.obs_variance for o in observations], axis=0))
        return cls(r)


@dataclass(eq=False)
class BaPrior:
    """Gaussian prior of Bayesian aggregation, variance kept in raw softplus form."""

    mean0: Tensor
    raw_variance0: Tensor
    learnable: bool = True

    def __post_init__(self):
        self.mean0 = as_tensor(self.mean0)
        self.raw_variance0 = as_tensor(self.raw_variance0)
        if self.mean0.ndim != 1 or self.mean0.shape != self.raw_variance0.shape:
            raise ShapeError("prior mean and variance must be vectors of equal length")

    @classmethod
    def from_moments(cls, mean0, variance0, learnable: bool = True) -> "BaPrior":
        variance0 = np.asarray(variance0, dtype=np.float64)
        if np.any(variance0 <= VARIANCE_FLOOR):
            raise DomainError(f"prior variance must exceed {VARIANCE_FLOOR}")
        excess = variance0 - VARIANCE_FLOOR
        # inverse softplus
        raw = excess + np.log(-np.expm1(-excess))
        return cls(Tensor(np.array(mean0, dtype=np.float64)), Tensor(raw), learnable)

    @classmethod
    def standard(cls, d_z: int, learnable: bool = True) -> "BaPrior":
        return cls.from_moments(np.zeros(d_z), np.ones(d_z), learnable)

    @property
    def dim(self) -> int:
        return self.mean0.shape[0]

    def variance0(self) -> Tensor:
        return add(softplus(self.raw_variance0), VARIANCE_FLOOR)

    def distribution(self) -> DiagGaussian:
        return DiagGaussian(self.mean0, self.variance0())

    def parameters(self) -> List[Tensor]:
        return [self.mean0, self.raw_variance0] if self.learnable else []


def canonical_order(obs: LatentObservation) -> np.ndarray:
    """Row order sorted lexicographically on (r, obs_variance) values."""
    keys = [obs.r.value]
    if obs.obs_variance is not None:
        keys.append(obs.obs_variance.value)
    table = np.concatenate(keys, axis=1)
    # np.lexsort treats its last key as primary
    return np.lexsort(table.T[::-1])


def mean_aggregate(obs: LatentObservation, head: Mlp) -> DiagGaussian:
    """MA: average the encodings and map the average to (mean, variance).

    Args:
        obs: N >= 1 encodings of width head.in_dim.
        head: Network from the averaged encoding to 2 * d_z raw outputs.
    """
    if len(obs) == 0:
        raise EmptyContextError("mean aggregation needs at least one observation")
    if head.out_dim % 2:
        raise ShapeError(f"latent head must emit an even width, got {head.out_dim}")
    d_z = head.out_dim // 2
    r = take(obs.r, canonical_order(obs))
    out = head(reduce_mean(r, axis=0, keepdims=True))
    return DiagGaussian.from_raw(reshape(columns(out, 0, d_z), (d_z,)), reshape(columns(out, d_z, 2 * d_z), (d_z,)))


def bayesian_aggregate(prior: BaPrior, obs: Optional[LatentObservation]) -> DiagGaussian:
    """BA: closed-form posterior of z given Gaussian observations of it.

    precision = 1/var0 + sum_n 1/var_n
    mean = mean0 + variance * sum_n (r_n - mean0) / var_n

    No observations returns the prior.
    """
    if obs is None or len(obs) == 0:
        return prior.distribution()
    if obs.obs_variance is None:
        raise ShapeError("bayesian aggregation needs observation variances")
    if obs.dim != prior.dim:
        raise ShapeError(f"observations of width {obs.dim} do not match prior of width {prior.dim}")
    order = canonical_order(obs)
    r = take(obs.r, order)
    variances = take(obs.obs_variance, order)
    variance0 = prior.variance0()
    precision = add(divide(1.0, variance0), reduce_sum(divide(1.0, variances), axis=0))
    variance = divide(1.0, precision)
    shift = reduce_sum(divide(subtract(r, prior.mean0), variances), axis=0)
    logging.debug(f"bayesian aggregation over {len(obs)} observations")
    return DiagGaussian(add(prior.mean0, multiply(variance, shift)), variance)
