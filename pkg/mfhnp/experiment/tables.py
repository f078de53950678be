"""Tabular exports for plotting and comparison."""

import logging

import numpy as np
import pandas as pd

from typing import Dict, Mapping, Optional, Sequence

from ..datasets import FidelityDataset, Split
from ..helpers import dataframes_to_xlsx_bytes
from ..np_models import MfhnpModel
from .constants import EXPORT_AGE_GROUPS, FRIENDLY_METRIC_NAMES
from .functions import Predictions, predict_split
from .models import EvalReport, TrainConfig


def _groups_and_days(dataset: FidelityDataset) -> Dict[str, int]:
    if dataset.meta.get("task") == "sir":
        n_groups = int(dataset.meta["n_groups"])
        return {"n_groups": n_groups, "horizon_days": dataset.d_y // n_groups}
    return {"n_groups": 1, "horizon_days": dataset.d_y}


def _as_days_by_group(values: np.ndarray, n_groups: int, horizon_days: int) -> np.ndarray:
    """Reshape (..., T*A) day-major output rows to (..., T, A)."""
    return values.reshape(values.shape[:-1] + (horizon_days, n_groups))


def residual_table(preds: Predictions, dataset: FidelityDataset) -> pd.DataFrame:
    """Per scenario, day and group: truth mean minus predicted mean."""
    layout = _groups_and_days(dataset)
    truth = _as_days_by_group(preds.truth.mean(axis=1), **layout)
    mean = _as_days_by_group(preds.mean_original(), **layout)
    rows = []
    for k, scenario_id in enumerate(preds.ids):
        for day in range(layout["horizon_days"]):
            for group in range(layout["n_groups"]):
                residual = truth[k, day, group] - mean[k, day, group]
                rows.append({"scenario_id": scenario_id, "day": day, "age_group": group, "residual": residual})
    df = pd.DataFrame(rows, columns=["scenario_id", "day", "age_group", "residual"])
    df.name = "Residuals"
    return df


def trajectory_table(
    preds: Predictions, dataset: FidelityDataset, age_groups: Optional[Sequence[int]] = None
) -> pd.DataFrame:
    """Truth and predicted trajectories with a two standard deviation band.

    pred_std is in model space; the band is mapped back to original units.

    Age groups outside the dataset's group range are skipped with a warning.
    """
    layout = _groups_and_days(dataset)
    n_groups = layout["n_groups"]
    if age_groups is None:
        age_groups = [g for g in EXPORT_AGE_GROUPS if g < n_groups] or [0]
    unknown = [g for g in age_groups if not 0 <= g < n_groups]
    if unknown:
        logging.warning(f"skipping age groups {unknown}: the data has {n_groups} groups")
    age_groups = [g for g in age_groups if 0 <= g < n_groups]

    truth = _as_days_by_group(preds.truth.mean(axis=1), **layout)
    mean = _as_days_by_group(preds.mean_original(), **layout)
    std = _as_days_by_group(np.sqrt(preds.variance), **layout)
    lower, upper = (_as_days_by_group(b, **layout) for b in preds.band_original())
    rows = []
    for k, scenario_id in enumerate(preds.ids):
        for group in age_groups:
            for day in range(layout["horizon_days"]):
                rows.append(
                    {
                        "scenario_id": scenario_id,
                        "age_group": group,
                        "day": day,
                        "truth_mean": truth[k, day, group],
                        "pred_mean": mean[k, day, group],
                        "pred_std": std[k, day, group],
                        "pred_lower": lower[k, day, group],
                        "pred_upper": upper[k, day, group],
                    }
                )
    columns = ["scenario_id", "age_group", "day", "truth_mean", "pred_mean", "pred_std", "pred_lower", "pred_upper"]
    df = pd.DataFrame(rows, columns=columns)
    df.name = "Trajectories"
    return df


def export_tables(
    model: MfhnpModel,
    low: FidelityDataset,
    high: FidelityDataset,
    split: Split,
    config: TrainConfig,
    part: str = "test",
    age_groups: Optional[Sequence[int]] = None,
) -> Dict[str, pd.DataFrame]:
    """Residual and trajectory tables for one split part."""
    preds = predict_split(model, low, high, split, config, part)
    return {"residuals": residual_table(preds, high), "trajectories": trajectory_table(preds, high, age_groups)}


def summarize_reports(reports: Mapping[str, Sequence[EvalReport]]) -> pd.DataFrame:
    """Mean and standard deviation of the headline metrics per label.

    Each label typically collects the reports of one configuration over
    several seeds.
    """
    rows = []
    for label, group in reports.items():
        if not group:
            continue
        row = {"label": label, "runs": len(group)}
        for metric, friendly in FRIENDLY_METRIC_NAMES.items():
            values = np.array([getattr(r, metric) for r in group], dtype=np.float64)
            row[f"{friendly} mean"] = values.mean()
            row[f"{friendly} std"] = values.std(ddof=1) if len(values) > 1 else 0.0
        digests = sorted({r.config_digest for r in group})
        row["config_digest"] = ",".join(digests)
        rows.append(row)
    columns = ["label", "runs"]
    for friendly in FRIENDLY_METRIC_NAMES.values():
        columns += [f"{friendly} mean", f"{friendly} std"]
    df = pd.DataFrame(rows, columns=columns + ["config_digest"])
    df.name = "Summary"
    return df


def tables_to_xlsx(tables: Mapping[str, pd.DataFrame]) -> bytes:
    return dataframes_to_xlsx_bytes(list(tables.values()))
