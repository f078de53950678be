"""Training with early stopping, and MAE/NLL evaluation."""

import math
import logging

import numpy as np
import pandas as pd

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from ..config import config_digest
from ..datasets import FidelityDataset, Split, Standardizer
from ..exceptions import ConfigError, EmptyContextError, NonFiniteError, NonFiniteLossError, PairingError, ShapeError
from ..gaussian import DiagGaussian, mixture_log_prob
from ..helpers import derive_rng
from ..np_models import ContextTargetBatch, MfhnpModel, NpConfig, elbo_terms, predict
from ..numerics import Adam, Tape, assign_parameter_vector, backward, parameter_vector
from .constants import CONTEXT_FRACTION_RANGE
from .models import EvalReport, TrainConfig

LOG_TWO_PI = math.log(2.0 * math.pi)


def np_config_for(variant: str, low: FidelityDataset, high: FidelityDataset, **settings) -> NpConfig:
    """An NpConfig for the variant with data widths taken from the datasets."""
    widths = {"d_x_low": low.d_x, "d_y_low": low.d_y, "d_x_high": high.d_x, "d_y_high": high.d_y}
    widths.update(settings)
    return NpConfig.for_variant(variant, **widths)


def build_model(
    np_config: NpConfig, low: FidelityDataset, high: FidelityDataset, split: Split, config: TrainConfig
) -> MfhnpModel:
    """Initialize a model and fit its input standardizers on the training ids."""
    _check_widths(np_config, low, high)
    model = MfhnpModel.initialize(np_config, seed=config.seed)
    model.metadata = {
        "standardizers": {
            "low": Standardizer.fit(low.x[low.rows(split.low_train)]).to_dict(),
            "high": Standardizer.fit(high.x[high.rows(split.high_train)]).to_dict(),
        },
        "train_config": config.to_dict(),
        "config_digest": config_digest(np_config.to_dict(), config.to_dict()),
    }
    return model


def _check_widths(np_config: NpConfig, low: FidelityDataset, high: FidelityDataset) -> None:
    expected = (np_config.d_x_low, np_config.d_y_low, np_config.d_x_high, np_config.d_y_high)
    actual = (low.d_x, low.d_y, high.d_x, high.d_y)
    if expected != actual:
        raise ShapeError(f"model widths (low x/y, high x/y) {expected} do not match the datasets {actual}")


def _standardizer(model: MfhnpModel, level: str, width: int) -> Standardizer:
    stored = model.metadata.get("standardizers", {}).get(level)
    return Standardizer.from_dict(stored) if stored else Standardizer.identity(width)


def _transform_outputs(y: np.ndarray, log_space: bool) -> np.ndarray:
    if not log_space:
        return y
    if np.any(y <= -1.0):
        raise ConfigError("log-space outputs need y > -1; disable log_space_outputs for this dataset")
    return np.log1p(y)


@dataclass
class _LevelView:
    """Model-space view of one fidelity: standardized x, transformed y."""

    dataset: FidelityDataset
    x: np.ndarray
    y: np.ndarray

    @classmethod
    def build(cls, model: MfhnpModel, dataset: FidelityDataset, log_space: bool) -> "_LevelView":
        x = _standardizer(model, dataset.level, dataset.d_x).apply(dataset.x)
        return cls(dataset, x, _transform_outputs(dataset.y, log_space))

    def paired_low(self, low: "_LevelView", ids: List[str], samples: np.ndarray) -> np.ndarray:
        """Low-fidelity outputs for high-fidelity ids at matching sample indices."""
        missing = [i for i in ids if i not in low.dataset]
        if missing:
            raise PairingError(f"no low-fidelity data for high-fidelity scenarios {missing[:5]}")
        rows = low.dataset.rows(ids)
        return low.y[rows, samples % low.dataset.n_samples]


def _sample_batch(
    view: _LevelView, ids: List[str], rng: np.random.Generator, low_view: Optional[_LevelView] = None
) -> ContextTargetBatch:
    """One point per scenario (a random sample index), split into context and target."""
    rows = view.dataset.rows(ids)
    samples = rng.integers(view.dataset.n_samples, size=len(rows))
    x, y = view.x[rows], view.y[rows, samples]
    y_low = view.paired_low(low_view, ids, samples) if low_view is not None else None
    n = len(rows)
    if n == 1:
        return ContextTargetBatch(view.dataset.level, x, y, x, y, y_low, y_low, target_in_context=True)
    fraction = rng.uniform(*CONTEXT_FRACTION_RANGE)
    n_context = int(np.clip(round(fraction * n), 1, n - 1))
    order = rng.permutation(n)
    ctx, tgt = order[:n_context], order[n_context:]
    return ContextTargetBatch(
        view.dataset.level,
        x[ctx],
        y[ctx],
        x[tgt],
        y[tgt],
        None if y_low is None else y_low[ctx],
        None if y_low is None else y_low[tgt],
    )


def _batch_ids(ids: List[str], order: np.ndarray, batch: int, batch_size: int) -> List[str]:
    size = min(batch_size, len(ids))
    picks = (np.arange(size) + batch * size) % len(ids)
    return [ids[i] for i in order[picks]]


def train(
    model: MfhnpModel, low: FidelityDataset, high: FidelityDataset, split: Split, config: TrainConfig
) -> Tuple[MfhnpModel, pd.DataFrame]:
    """Fit a model by Adam on its negated ELBO with early stopping on validation NLL.

    Each epoch runs ceil(max(training scenarios per level) / batch_size)
    batches. The returned model carries the parameters of the epoch with the
    best validation NLL (the last epoch when there are no validation ids).

    Returns:
        The model (updated in place) and the per-epoch history table.
    """
    np_config = model.config
    _check_widths(np_config, low, high)
    digest = model.metadata.get("config_digest") or config_digest(np_config.to_dict(), config.to_dict())
    history = pd.DataFrame(columns=["epoch", "train_loss", "val_nll", "val_mae", "improved"])
    history.name = f"{np_config.variant}-{np_config.aggregation} training history {digest}"
    if config.max_epochs == 0:
        logging.info("max_epochs is 0, returning the model untouched")
        return model, history

    high_ids = list(split.high_train)
    low_ids = list(split.low_train) if np_config.hierarchical else []
    if not high_ids or (np_config.hierarchical and not low_ids):
        raise EmptyContextError("training needs at least one training scenario at every level the variant uses")
    if np_config.variant == "mf":
        unpaired = sorted(set(high_ids) - set(split.low_train))
        if unpaired:
            raise PairingError(f"MF-NP needs low-fidelity training data for every high-fidelity scenario; missing {unpaired[:5]}")

    low_view = _LevelView.build(model, low, config.log_space_outputs)
    high_view = _LevelView.build(model, high, config.log_space_outputs)
    pair_view = low_view if np_config.variant == "mf" else None

    params = model.parameters()
    optimizer = Adam(params, learning_rate=config.learning_rate)
    n_batches = math.ceil(max(len(high_ids), len(low_ids)) / config.batch_size)
    best_nll, best_params, stale = math.inf, parameter_vector(params), 0
    rows = []
    for epoch in range(config.max_epochs):
        order_rng = derive_rng(config.seed, "epoch", epoch)
        high_order = order_rng.permutation(len(high_ids))
        low_order = order_rng.permutation(len(low_ids)) if low_ids else None
        losses = []
        for batch in range(n_batches):
            rng = derive_rng(config.seed, "batch", epoch, batch)
            high_batch = _sample_batch(
                high_view, _batch_ids(high_ids, high_order, batch, config.batch_size), rng, pair_view
            )
            low_batch = None
            if low_ids:
                low_batch = _sample_batch(low_view, _batch_ids(low_ids, low_order, batch, config.batch_size), rng)
            try:
                with Tape() as tape:
                    tape.watch_all(params)
                    terms = elbo_terms(model, low_batch, high_batch, rng)
            except NonFiniteError as e:
                raise NonFiniteLossError(f"non-finite value while computing the loss: {e}", epoch, batch)
            loss = terms.loss.item()
            if not math.isfinite(loss):
                raise NonFiniteLossError("training loss is not finite", epoch, batch, terms.values())
            grads = backward(terms.loss)
            try:
                optimizer.step(grads)
            except NonFiniteError as e:
                raise NonFiniteLossError(f"non-finite gradient: {e}", epoch, batch, terms.values())
            losses.append(loss)
            logging.debug(f"epoch {epoch} batch {batch}: loss {loss:.6g}")

        val_nll, val_mae = math.nan, math.nan
        if split.val:
            report = evaluate(model, low, high, split, config, part="val")
            val_nll, val_mae = report.nll, report.mae
        improved = bool(split.val) and val_nll < best_nll
        if improved:
            best_nll, best_params, stale = val_nll, parameter_vector(params), 0
        elif split.val:
            stale += 1
        rows.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_nll": val_nll, "val_mae": val_mae, "improved": improved}
        )
        logging.info(f"epoch {epoch}: train loss {rows[-1]['train_loss']:.6g}, val nll {val_nll:.6g}")
        if split.val and stale >= config.patience:
            logging.info(f"early stop after epoch {epoch}: no improvement for {config.patience} epochs")
            break

    if split.val:
        assign_parameter_vector(params, best_params)
    else:
        logging.warning("no validation scenarios: keeping the parameters of the last epoch")
    history = pd.DataFrame(rows, columns=history.columns)
    history.name = f"{np_config.variant}-{np_config.aggregation} training history {digest}"
    return model, history


@dataclass
class Predictions:
    """Predictive moments (model space) next to ground truth (original space)."""

    ids: List[str]
    truth: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    components: List[DiagGaussian]
    log_space: bool

    def mean_original(self) -> np.ndarray:
        return np.expm1(self.mean) if self.log_space else self.mean

    def band_original(self, width: float = 2.0) -> Tuple[np.ndarray, np.ndarray]:
        std = np.sqrt(self.variance)
        lower, upper = self.mean - width * std, self.mean + width * std
        if self.log_space:
            return np.expm1(lower), np.expm1(upper)
        return lower, upper


def predict_split(
    model: MfhnpModel, low: FidelityDataset, high: FidelityDataset, split: Split, config: TrainConfig, part: str = "test"
) -> Predictions:
    """Predict the high-fidelity outputs of one split part.

    Context sets are the training scenarios of each level at sample 0.
    Predictions use a fixed stream, so repeated calls agree.
    """
    _check_widths(model.config, low, high)
    ids = split.ids(part)
    if not ids:
        raise EmptyContextError(f"the {part} split is empty")
    np_config = model.config
    low_view = _LevelView.build(model, low, config.log_space_outputs)
    high_view = _LevelView.build(model, high, config.log_space_outputs)

    low_context = None
    if np_config.hierarchical:
        rows = low.rows(split.low_train)
        low_context = ContextTargetBatch.context_only("low", low_view.x[rows], low_view.y[rows, 0])
    rows = high.rows(split.high_train)
    context_y_low = target_y_low = None
    if np_config.variant == "mf":
        zeros = np.zeros(len(split.high_train), dtype=np.intp)
        context_y_low = high_view.paired_low(low_view, split.high_train, zeros)
        target_y_low = high_view.paired_low(low_view, ids, np.zeros(len(ids), dtype=np.intp))
    high_context = ContextTargetBatch.context_only("high", high_view.x[rows], high_view.y[rows, 0], context_y_low)

    target_rows = high.rows(ids)
    predictive, components = predict(
        model,
        low_context,
        high_context,
        high_view.x[target_rows],
        config.eval_latent_samples,
        derive_rng(config.seed, "predict", part),
        y_low_targets=target_y_low,
        return_components=True,
    )
    return Predictions(
        ids,
        high.y[target_rows],
        predictive.mean.numpy(),
        predictive.variance.numpy(),
        components,
        config.log_space_outputs,
    )


def gaussian_nll(truth: np.ndarray, mean: np.ndarray, variance: np.ndarray) -> np.ndarray:
    """Elementwise negative log density of truth under N(mean, variance)."""
    return 0.5 * (LOG_TWO_PI + np.log(variance) + np.square(truth - mean) / variance)


def evaluate(
    model: MfhnpModel,
    low: FidelityDataset,
    high: FidelityDataset,
    split: Split,
    config: TrainConfig,
    part: str = "test",
) -> EvalReport:
    """MAE and NLL of the high-fidelity predictions for one split part.

    With log_space_outputs the model works on ln(1 + y): NLL is taken in that
    space and MAE after mapping the predictive mean back with expm1. Both are
    averaged per output dimension, then over samples, then over scenarios.
    """
    preds = predict_split(model, low, high, split, config, part)
    truth_model_space = _transform_outputs(preds.truth, config.log_space_outputs)
    errors = np.abs(preds.mean_original()[:, None, :] - preds.truth)
    per_mae = errors.mean(axis=(1, 2))
    if config.nll_mode == "mixture":
        d_y = preds.truth.shape[2]
        per_sample = np.stack(
            [-mixture_log_prob(preds.components, truth_model_space[:, s, :]) / d_y for s in range(preds.truth.shape[1])],
            axis=1,
        )
        per_nll = per_sample.mean(axis=1)
    else:
        per_nll = gaussian_nll(truth_model_space, preds.mean[:, None, :], preds.variance[:, None, :]).mean(axis=(1, 2))

    per_scenario = [
        {"scenario_id": i, "mae": float(m), "nll": float(n)} for i, m, n in zip(preds.ids, per_mae, per_nll)
    ]
    digest = model.metadata.get("config_digest") or config_digest(model.config.to_dict(), config.to_dict())
    report = EvalReport(
        mae=float(np.mean([row["mae"] for row in per_scenario])),
        nll=float(np.mean([row["nll"] for row in per_scenario])),
        per_scenario=per_scenario,
        config_digest=digest,
        variant=model.config.variant,
        aggregation=model.config.aggregation,
        part=part,
        nll_mode=config.nll_mode,
    )
    logging.info(f"{part}: MAE {report.mae:.6g}, NLL {report.nll:.6g} over {len(per_scenario)} scenarios")
    return report


def train_config_of(model: MfhnpModel, **overrides) -> TrainConfig:
    """The training settings stored with a model, with overrides applied."""
    settings = dict(model.metadata.get("train_config", {}))
    settings.update(overrides)
    return TrainConfig.from_dict(settings)


def predict_table(preds: Predictions) -> pd.DataFrame:
    """Long table of the predictive mean and standard deviation per target dimension."""
    n, d_y = preds.mean.shape
    df = pd.DataFrame(
        {
            "scenario_id": np.repeat(preds.ids, d_y),
            "dim": np.tile(np.arange(d_y), n),
            "mean": preds.mean.reshape(-1),
            "std": np.sqrt(preds.variance).reshape(-1),
            "mean_original": preds.mean_original().reshape(-1),
        }
    )
    df.name = "Predictions"
    return df
