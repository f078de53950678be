"""Encoders, decoders, ELBO estimators and prediction.

Random draws are taken from the caller's generator in a fixed order: all
low-level draws first, then the high-level draws. Estimators are therefore
deterministic given (seed, data, parameters).
"""

import logging

import numpy as np

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

from ..aggregation import LatentObservation, bayesian_aggregate, mean_aggregate
from ..exceptions import EmptyContextError, PairingError, ShapeError, VariantError
from ..gaussian import VARIANCE_FLOOR, DiagGaussian, kl_divergence, log_prob, moment_match, sample
from ..numerics import (
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    columns,
    concatenate,
    divide,
    multiply,
    negative,
    reduce_mean,
    reshape,
    softplus,
)
from .models import ContextTargetBatch, MfhnpModel

Summary = Optional[Union[Tensor, np.ndarray]]


@dataclass(eq=False)
class ElboTerms:
    """The pieces of one ELBO estimate.

    Log-likelihoods are per target point (summed over output dims). KL terms
    are raw; the loss divides each by its level's target count.
    """

    high_ll: Tensor
    high_kl: Tensor
    loss: Tensor
    low_ll: Optional[Tensor] = None
    low_kl: Optional[Tensor] = None

    def values(self) -> Dict[str, float]:
        out = {"loss": self.loss.item(), "high_ll": self.high_ll.item(), "high_kl": self.high_kl.item()}
        if self.low_ll is not None:
            out["low_ll"] = self.low_ll.item()
            out["low_kl"] = self.low_kl.item()
        return out


def _aggregate(model: MfhnpModel, level: str, features: np.ndarray) -> DiagGaussian:
    features = as_tensor(features)
    bundle = model.bundle(level)
    if model.config.aggregation == "ma":
        if features.shape[0] == 0:
            raise EmptyContextError(f"mean aggregation at the {level} level needs at least one context point")
        return mean_aggregate(LatentObservation(bundle.encoder(features)), bundle.latent_head)
    prior = model.ba_priors[level]
    if features.shape[0] == 0:
        return prior.distribution()
    r = bundle.observation_head(bundle.encoder(features))
    d_z = model.config.d_z
    variances = add(softplus(columns(r, d_z, 2 * d_z)), VARIANCE_FLOOR)
    return bayesian_aggregate(prior, LatentObservation(columns(r, 0, d_z), variances))


def _check_batch(model: MfhnpModel, batch: ContextTargetBatch, level: str) -> None:
    if batch.fidelity != level:
        raise ShapeError(f"expected a {level}-fidelity batch, got {batch.fidelity}")
    n_points = batch.n_context + batch.n_target
    if n_points and (batch.d_x != model.config.d_x(level) or batch.d_y != model.config.d_y(level)):
        raise ShapeError(
            f"{level} batch has widths (x={batch.d_x}, y={batch.d_y}), model expects "
            f"(x={model.config.d_x(level)}, y={model.config.d_y(level)})"
        )


def encode_low(model: MfhnpModel, context: ContextTargetBatch, include_target: bool = False) -> DiagGaussian:
    """Posterior over z_l from the low-fidelity context (optionally with its targets)."""
    _check_batch(model, context, "low")
    x, y, _ = context.points(include_target)
    return _aggregate(model, "low", np.hstack([x, y]))


def encode_high(
    model: MfhnpModel, z_l_summary: Summary, context: ContextTargetBatch, include_target: bool = False
) -> DiagGaussian:
    """Posterior over z_h.

    Each point's encoder input is (x, y, summary) for the hierarchical
    variants, (x, y_low, y) for MF-NP and (x, y) for SF-NP.
    """
    _check_batch(model, context, "high")
    config = model.config
    x, y, y_low = context.points(include_target)
    n = len(x)
    if config.variant == "mf":
        if y_low is None:
            raise PairingError("MF-NP needs the paired low-fidelity output of every high-fidelity point")
        if y_low.shape[1] != config.d_y_low and n:
            raise ShapeError(f"paired y_low has width {y_low.shape[1]}, expected {config.d_y_low}")
        return _aggregate(model, "high", np.hstack([x, y_low.reshape(n, config.d_y_low), y]))

    if not config.hierarchical:
        if z_l_summary is not None:
            raise VariantError("SF-NP takes no low-level summary")
        return _aggregate(model, "high", np.hstack([x, y]))

    if z_l_summary is None:
        raise VariantError(f"{config.variant} needs a low-level summary")
    summary = as_tensor(z_l_summary)
    if summary.shape != (config.summary_width,):
        raise VariantError(
            f"{config.variant} expects a summary of width {config.summary_width}, got shape {summary.shape}"
        )
    if n == 0:
        return _aggregate(model, "high", np.zeros((0, config.d_x_high + config.d_y_high + config.summary_width)))
    tiled = broadcast_to(reshape(summary, (1, config.summary_width)), (n, config.summary_width))
    return _aggregate(model, "high", concatenate([np.hstack([x, y]), tiled], axis=1))


def decode(model: MfhnpModel, level: str, z, x, y_low=None) -> DiagGaussian:
    """Predictive Gaussian over y at one level given its latent z.

    Args:
        z: Latent of width d_z.
        x: One input (d_x,) or a batch (M, d_x).
        y_low: MF-NP only: the paired low-fidelity outputs of the inputs.

    Returns:
        A DiagGaussian shaped like the inputs: (d_y,) or (M, d_y).
    """
    config = model.config
    z = as_tensor(z)
    if z.shape != (config.d_z,):
        raise ShapeError(f"latent must have shape ({config.d_z},), got {z.shape}")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = x.reshape(1, -1) if single else x
    if x.ndim != 2 or x.shape[1] != config.d_x(level):
        raise ShapeError(f"{level} decoder expects inputs of width {config.d_x(level)}, got {x.shape}")
    m = len(x)
    pieces = [broadcast_to(reshape(z, (1, config.d_z)), (m, config.d_z)), x]
    if level == "high" and config.variant == "mf":
        if y_low is None:
            raise PairingError("MF-NP decoding needs y_low for every target input")
        y_low = np.asarray(y_low, dtype=np.float64).reshape(m, -1)
        if y_low.shape[1] != config.d_y_low:
            raise ShapeError(f"y_low must have width {config.d_y_low}, got {y_low.shape[1]}")
        pieces.append(y_low)
    out = model.bundle(level).decoder(concatenate(pieces, axis=1))
    d_y = config.d_y(level)
    mean, raw = columns(out, 0, d_y), columns(out, d_y, 2 * d_y)
    if single:
        mean, raw = reshape(mean, (d_y,)), reshape(raw, (d_y,))
    return DiagGaussian.from_raw(mean, raw)


def _target_log_likelihood(model: MfhnpModel, level: str, z: Tensor, batch: ContextTargetBatch) -> Tensor:
    """Mean over target points of log p(y | z, x), summed over output dims."""
    dist = decode(model, level, z, batch.target_x, y_low=batch.target_y_low)
    return reduce_mean(log_prob(dist, batch.target_y))


def _average(terms: List[Tensor]) -> Tensor:
    total = terms[0]
    for term in terms[1:]:
        total = add(total, term)
    return divide(total, float(len(terms)))


def _require_targets(batch: ContextTargetBatch) -> None:
    if batch.n_target == 0:
        raise EmptyContextError(f"{batch.fidelity}-fidelity batch has no target points")


def _single_level_terms(model: MfhnpModel, batch: ContextTargetBatch, rng: np.random.Generator) -> ElboTerms:
    _require_targets(batch)
    q_all = encode_high(model, None, batch, include_target=True)
    q_ctx = encode_high(model, None, batch)
    draws = [sample(q_all, rng) for _ in range(model.config.s_samples)]
    ll = _average([_target_log_likelihood(model, "high", z, batch) for z in draws])
    kl = kl_divergence(q_all, q_ctx)
    loss = negative(add(ll, divide(kl, -float(batch.n_target))))
    return ElboTerms(high_ll=ll, high_kl=kl, loss=loss)


def elbo_sfnp(model: MfhnpModel, high_batch: ContextTargetBatch, rng: np.random.Generator) -> ElboTerms:
    """Negated single-fidelity ELBO with S reparameterized draws."""
    if model.config.variant != "sf":
        raise VariantError(f"elbo_sfnp called on a {model.config.variant} model")
    return _single_level_terms(model, high_batch, rng)


def elbo_mfnp(model: MfhnpModel, paired_batch: ContextTargetBatch, rng: np.random.Generator) -> ElboTerms:
    """Negated ELBO of MF-NP: SF-NP with y_low fed to encoder and decoder."""
    if model.config.variant != "mf":
        raise VariantError(f"elbo_mfnp called on a {model.config.variant} model")
    if not paired_batch.paired:
        raise PairingError("MF-NP needs paired (x_h, y_l, y_h) points; the batch carries no y_low")
    return _single_level_terms(model, paired_batch, rng)


def low_summary(model: MfhnpModel, q_low: DiagGaussian) -> Tensor:
    """Deterministic z_l summary of the MEAN and MEANSTD variants."""
    if model.config.variant == "hnp-meanstd":
        return concatenate([q_low.mean, q_low.standard_deviation()], axis=0)
    return q_low.mean


def elbo_mfhnp(
    model: MfhnpModel,
    low_batch: ContextTargetBatch,
    high_batch: ContextTargetBatch,
    rng: np.random.Generator,
    high_weight: float = 1.0,
) -> ElboTerms:
    """Negated two-level ELBO of the hierarchical variants.

    loss = -[high_weight * (E log p(y_h) - KL_h / M_h) + (E log p(y_l) - KL_l / M_l)]

    The variant decides how z_l reaches the high-level posteriors:
      hnp-as: one z_h draw per coupled z_l draw.
      hnp-mean / hnp-meanstd: the mean (and std) of q(z_l | all low points).
      hnp-mc: K outer z_l draws, S inner z_h draws each.
    """
    config = model.config
    if not config.hierarchical:
        raise VariantError(f"elbo_mfhnp called on a {config.variant} model")
    _require_targets(low_batch)
    _require_targets(high_batch)

    q_low_all = encode_low(model, low_batch, include_target=True)
    q_low_ctx = encode_low(model, low_batch)
    low_kl = kl_divergence(q_low_all, q_low_ctx)
    low_draws = [sample(q_low_all, rng) for _ in range(config.k_samples)]
    low_ll = _average([_target_log_likelihood(model, "low", z, low_batch) for z in low_draws])

    high_lls, high_kls = [], []
    if config.variant in ("hnp-mean", "hnp-meanstd"):
        summary = low_summary(model, q_low_all)
        q_high_all = encode_high(model, summary, high_batch, include_target=True)
        q_high_ctx = encode_high(model, summary, high_batch)
        high_kls.append(kl_divergence(q_high_all, q_high_ctx))
        for _ in range(config.s_samples):
            high_lls.append(_target_log_likelihood(model, "high", sample(q_high_all, rng), high_batch))
    else:
        inner = 1 if config.variant == "hnp-as" else config.s_samples
        for z_low in low_draws:
            q_high_all = encode_high(model, z_low, high_batch, include_target=True)
            q_high_ctx = encode_high(model, z_low, high_batch)
            high_kls.append(kl_divergence(q_high_all, q_high_ctx))
            draws = [_target_log_likelihood(model, "high", sample(q_high_all, rng), high_batch) for _ in range(inner)]
            high_lls.append(_average(draws))
    high_ll = _average(high_lls)
    high_kl = _average(high_kls)

    high_objective = add(high_ll, divide(high_kl, -float(high_batch.n_target)))
    low_objective = add(low_ll, divide(low_kl, -float(low_batch.n_target)))
    loss = negative(add(low_objective, multiply(high_objective, float(high_weight))))
    return ElboTerms(high_ll=high_ll, high_kl=high_kl, loss=loss, low_ll=low_ll, low_kl=low_kl)


def elbo_terms(
    model: MfhnpModel,
    low_batch: Optional[ContextTargetBatch],
    high_batch: ContextTargetBatch,
    rng: np.random.Generator,
    high_weight: float = 1.0,
) -> ElboTerms:
    """Dispatch to the estimator of the model's variant."""
    variant = model.config.variant
    if variant == "sf":
        return elbo_sfnp(model, high_batch, rng)
    if variant == "mf":
        return elbo_mfnp(model, high_batch, rng)
    if low_batch is None:
        raise VariantError(f"{variant} needs a low-fidelity batch")
    return elbo_mfhnp(model, low_batch, high_batch, rng, high_weight=high_weight)


def elbo(model, low_batch, high_batch, rng, high_weight: float = 1.0) -> Tensor:
    """Scalar loss (negated ELBO) of the model's variant."""
    return elbo_terms(model, low_batch, high_batch, rng, high_weight).loss


def predict(
    model: MfhnpModel,
    low_context: Optional[ContextTargetBatch],
    high_context: ContextTargetBatch,
    x_targets,
    n_latent_samples: int,
    rng: np.random.Generator,
    y_low_targets=None,
    return_components: bool = False,
) -> Union[DiagGaussian, Tuple[DiagGaussian, List[DiagGaussian]]]:
    """Predictive distribution of y_h at the target inputs.

    Draws n_latent_samples latents through the hierarchy (z_l then z_h),
    decodes each and moment-matches the decodes per target. Only the
    context points of the batches are used.

    Returns:
        A DiagGaussian of shape (M, d_y_high); with return_components also the
        list of per-draw decodes.
    """
    config = model.config
    if n_latent_samples < 1:
        raise ShapeError("n_latent_samples must be at least 1")
    if config.variant == "mf" and y_low_targets is None:
        raise PairingError("MF-NP prediction needs y_low at every target input")
    x_targets = np.asarray(x_targets, dtype=np.float64)
    x_targets = x_targets.reshape(1, -1) if x_targets.ndim == 1 else x_targets

    components = []
    q_low = encode_low(model, low_context) if config.hierarchical else None
    q_high = None
    if config.variant in ("hnp-mean", "hnp-meanstd"):
        q_high = encode_high(model, low_summary(model, q_low), high_context)
    elif not config.hierarchical:
        q_high = encode_high(model, None, high_context)
    for _ in range(n_latent_samples):
        if config.variant in ("hnp-as", "hnp-mc"):
            q_high = encode_high(model, sample(q_low, rng, reparameterized=False), high_context)
        z_high = sample(q_high, rng, reparameterized=False)
        components.append(decode(model, "high", z_high, x_targets, y_low=y_low_targets).detach())
    predictive = moment_match(components)
    logging.debug(f"predicted {len(x_targets)} targets from {n_latent_samples} latent draws")
    if return_components:
        return predictive, components
    return predictive
