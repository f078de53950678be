"""Two-fidelity datasets: containers, splits, on-disk format and generators.

A dataset directory holds `manifest.ini` (format version, counts, widths,
metadata and the optional split) and one `{level}.records.csv` per fidelity.
Record rows are (scenario_id, field, sample, values) where field is "x" or
"y", sample is -1 for x, and values are space-separated "%.17g" numbers so
reading back is bit-exact.
"""

import io
import os
import glob
import logging
import configparser

import numpy as np
import pandas as pd

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from ..epi_sim import (
    DEFAULT_HORIZON_DAYS,
    DEFAULT_SAMPLES,
    HIGH_FIDELITY_GROUPS,
    LOW_FIDELITY_GROUPS,
    coarsen_scenario,
    default_group_map,
    featurize,
    sample_scenario_family,
    simulate,
)
from ..exceptions import DatasetFormatError, InfeasibleSplitError, ShapeError
from ..helpers import atomic_write_text, derive_rng, directory_lock
from .constants import (
    DATASET_FORMAT_VERSION,
    GRID_MONTHS_IN,
    GRID_MONTHS_OUT,
    MANIFEST_NAME,
    RECORD_COLUMNS,
    RECORD_FILE_TEMPLATE,
    SPLIT_MODES,
    SPLIT_PRESETS,
    SYNTH_HIGH_CURVATURE,
    SYNTH_HIGH_POINTS,
    SYNTH_LOW_POINTS,
)

LEVELS = ["low", "high"]


@dataclass(eq=False)
class FidelityDataset:
    """All scenarios of one fidelity level.

    Attributes:
        level: "low" or "high".
        ids: Unique scenario ids, one per row of x.
        x: (n, d_x) scenario inputs.
        y: (n, S, d_y) output samples.
        meta: Free-form string metadata (task, grid shape, group count...).
    """

    level: str
    ids: List[str]
    x: np.ndarray
    y: np.ndarray
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.ids = [str(i) for i in self.ids]
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.meta = {str(k): str(v) for k, v in self.meta.items()}
        if self.level not in LEVELS:
            raise ShapeError(f"unknown fidelity level '{self.level}'")
        if len(set(self.ids)) != len(self.ids):
            raise ShapeError("scenario ids must be unique")
        if self.x.ndim != 2 or self.y.ndim != 3:
            raise ShapeError(f"x must be (n, d_x) and y (n, S, d_y), got {self.x.shape} and {self.y.shape}")
        if not len(self.ids) == len(self.x) == len(self.y):
            raise ShapeError("ids, x and y must describe the same scenarios")
        if self.y.shape[1] < 1 and len(self.ids):
            raise ShapeError("every scenario needs at least one output sample")
        self._index = {scenario_id: row for row, scenario_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_y(self) -> int:
        return self.y.shape[2]

    @property
    def n_samples(self) -> int:
        return self.y.shape[1]

    def __contains__(self, scenario_id: str) -> bool:
        return scenario_id in self._index

    def rows(self, ids: Sequence[str]) -> np.ndarray:
        missing = [i for i in ids if i not in self._index]
        if missing:
            raise KeyError(f"{self.level} dataset has no scenarios {missing[:5]}")
        return np.array([self._index[i] for i in ids], dtype=np.intp)

    def subset(self, ids: Sequence[str]) -> "FidelityDataset":
        rows = self.rows(ids)
        return FidelityDataset(self.level, list(ids), self.x[rows], self.y[rows], dict(self.meta))

    def scenarios(self) -> Iterator[Tuple[str, np.ndarray, np.ndarray]]:
        for scenario_id, x, y in zip(self.ids, self.x, self.y):
            yield scenario_id, x, y

    def equals(self, other: "FidelityDataset") -> bool:
        return (
            self.level == other.level
            and self.ids == other.ids
            and self.meta == other.meta
            and self.x.shape == other.x.shape
            and self.y.shape == other.y.shape
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )


@dataclass
class Standardizer:
    """Per-column affine normalization fitted on training rows."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        if len(x) == 0:
            return cls(np.zeros(x.shape[1]), np.ones(x.shape[1]))
        scale = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(scale > 0, scale, 1.0))

    @classmethod
    def identity(cls, width: int) -> "Standardizer":
        return cls(np.zeros(width), np.ones(width))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def to_dict(self) -> Dict[str, List[float]]:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: Dict[str, List[float]]) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


@dataclass
class SplitSpec:
    """How to partition scenario ids.

    n_candidates is the size of the training candidate pool; it defaults to
    n_train_low (nested) or n_train_low + n_train_high (non-nested).
    """

    mode: str = "nested"
    n_train_low: int = 26
    n_train_high: int = 5
    n_val: int = 26
    n_test: int = 52
    seed: int = 0
    n_candidates: Optional[int] = None

    def __post_init__(self):
        if self.mode not in SPLIT_MODES:
            raise InfeasibleSplitError(f"unknown split mode '{self.mode}', expected one of {SPLIT_MODES}")
        counts = [self.n_train_low, self.n_train_high, self.n_val, self.n_test]
        if any(c < 0 for c in counts) or (self.n_candidates is not None and self.n_candidates < 0):
            raise InfeasibleSplitError("split counts must be non-negative")

    @classmethod
    def preset(cls, name: str, mode: str = "nested", seed: int = 0) -> "SplitSpec":
        if name not in SPLIT_PRESETS:
            raise InfeasibleSplitError(f"unknown split preset '{name}', expected one of {sorted(SPLIT_PRESETS)}")
        counts = {k: v for k, v in SPLIT_PRESETS[name].items() if k != "n_ids"}
        return cls(mode=mode, seed=seed, **counts)

    @property
    def candidate_pool(self) -> int:
        if self.n_candidates is not None:
            return self.n_candidates
        return self.n_train_low if self.mode == "nested" else self.n_train_low + self.n_train_high


@dataclass
class Split:
    mode: str
    seed: int
    low_train: List[str]
    high_train: List[str]
    val: List[str]
    test: List[str]

    def ids(self, name: str) -> List[str]:
        if name not in ("low_train", "high_train", "val", "test"):
            raise KeyError(f"unknown split part '{name}'")
        return list(getattr(self, name))


def make_split(
    all_ids: Sequence[str],
    spec: SplitSpec,
    low_ids: Optional[Sequence[str]] = None,
    high_ids: Optional[Sequence[str]] = None,
) -> Split:
    """Partition ids into low/high training, validation and test sets.

    Ids are sorted first so the result depends only on the id sets and seed.
    Validation and test ids are drawn first, from ids with high-fidelity data.
    Training ids come from the rest: for nested splits the high-fidelity ids
    are drawn from ids with both levels and the low-fidelity set is filled up
    from a candidate pool; for non-nested splits the two sets are disjoint.

    Args:
        all_ids: every scenario id, normally the union of both levels' ids.
        low_ids: ids with low-fidelity data; defaults to all ids.
        high_ids: ids with high-fidelity data; defaults to all ids. Only these
            can be high-fidelity training, validation or test ids.
    """
    ids = sorted(set(str(i) for i in all_ids))
    has_low = set(ids) if low_ids is None else set(str(i) for i in low_ids)
    has_high = set(ids) if high_ids is None else set(str(i) for i in high_ids)
    pool = spec.candidate_pool
    if pool + spec.n_val + spec.n_test > len(ids):
        raise InfeasibleSplitError(
            f"{pool} candidates + {spec.n_val} val + {spec.n_test} test exceed the {len(ids)} available ids"
        )
    if spec.mode == "nested":
        if spec.n_train_low > pool or spec.n_train_high > spec.n_train_low:
            raise InfeasibleSplitError(
                f"nested split needs high ({spec.n_train_high}) <= low ({spec.n_train_low}) <= candidates ({pool})"
            )
    elif spec.n_train_low + spec.n_train_high > pool:
        raise InfeasibleSplitError(
            f"non-nested split needs low ({spec.n_train_low}) + high ({spec.n_train_high}) <= candidates ({pool})"
        )

    rng = np.random.default_rng(spec.seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    evaluation = [i for i in order if i in has_high][: spec.n_val + spec.n_test]
    val, test = evaluation[: spec.n_val], evaluation[spec.n_val :]
    taken = set(evaluation)
    rest = [i for i in order if i not in taken]
    if spec.mode == "nested":
        high = [i for i in rest if i in has_low and i in has_high][: spec.n_train_high]
        fill = [i for i in rest if i in has_low and i not in high][: pool - len(high)]
        extra = [fill[k] for k in rng.permutation(len(fill))[: spec.n_train_low - len(high)]]
        low = high + extra
    else:
        # ids with only high-fidelity data go to the high level first
        high = [i for i in rest if i in has_high and i not in has_low]
        high = (high + [i for i in rest if i in has_high and i in has_low])[: spec.n_train_high]
        low = [i for i in rest if i in has_low and i not in high][: spec.n_train_low]
    short = [
        name
        for name, got, wanted in (
            ("low-fidelity training", low, spec.n_train_low),
            ("high-fidelity training", high, spec.n_train_high),
            ("validation", val, spec.n_val),
            ("test", test, spec.n_test),
        )
        if len(got) < wanted
    ]
    if short:
        raise InfeasibleSplitError(f"not enough ids with the required fidelity for: {', '.join(short)}")
    split = Split(spec.mode, spec.seed, sorted(low), sorted(high), sorted(val), sorted(test))
    logging.info(
        f"{spec.mode} split: {len(split.low_train)} low, {len(split.high_train)} high, "
        f"{len(split.val)} val, {len(split.test)} test"
    )
    return split


def _format_values(values: np.ndarray) -> str:
    return " ".join("%.17g" % v for v in values)


def _parse_values(text: str) -> np.ndarray:
    return np.array(text.split(), dtype=np.float64)


def records_table(dataset: FidelityDataset) -> pd.DataFrame:
    rows = []
    for scenario_id, x, y in dataset.scenarios():
        rows.append((scenario_id, "x", -1, _format_values(x)))
        for sample_index, values in enumerate(y):
            rows.append((scenario_id, "y", sample_index, _format_values(values)))
    table = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    table.name = f"{dataset.level} records"
    return table


def _manifest(low: FidelityDataset, high: FidelityDataset, split: Optional[Split]) -> str:
    config = configparser.ConfigParser()
    config["dataset"] = {"format_version": str(DATASET_FORMAT_VERSION)}
    for dataset in (low, high):
        section = {
            "n_scenarios": str(len(dataset)),
            "d_x": str(dataset.d_x),
            "d_y": str(dataset.d_y),
            "n_samples": str(dataset.n_samples),
        }
        for key in sorted(dataset.meta):
            section[f"meta_{key}"] = dataset.meta[key]
        config[dataset.level] = section
    if split is not None:
        config["split"] = {
            "mode": split.mode,
            "seed": str(split.seed),
            "low_train": " ".join(split.low_train),
            "high_train": " ".join(split.high_train),
            "val": " ".join(split.val),
            "test": " ".join(split.test),
        }
    buf = io.StringIO()
    config.write(buf)
    return buf.getvalue()


def write_dataset(dir_path: str, low: FidelityDataset, high: FidelityDataset, split: Optional[Split] = None) -> None:
    """Write both fidelities (and an optional split) under an exclusive directory lock."""
    if low.level != "low" or high.level != "high":
        raise ShapeError("write_dataset expects the low dataset first and the high dataset second")
    with directory_lock(dir_path):
        for dataset in (low, high):
            path = os.path.join(dir_path, RECORD_FILE_TEMPLATE.format(level=dataset.level))
            atomic_write_text(path, records_table(dataset).to_csv(index=False))
        atomic_write_text(os.path.join(dir_path, MANIFEST_NAME), _manifest(low, high, split))
    logging.info(f"wrote dataset with {len(low)} low and {len(high)} high scenarios to {dir_path}")


def write_split(dir_path: str, split: Split) -> None:
    """Replace the split stored in an existing dataset's manifest."""
    low, high, _ = read_dataset(dir_path)
    with directory_lock(dir_path):
        atomic_write_text(os.path.join(dir_path, MANIFEST_NAME), _manifest(low, high, split))
    logging.info(f"stored {split.mode} split in {dir_path}")


def _read_level(dir_path: str, level: str, section: configparser.SectionProxy) -> FidelityDataset:
    path = os.path.join(dir_path, RECORD_FILE_TEMPLATE.format(level=level))
    if not os.path.exists(path):
        raise DatasetFormatError(f"missing record file {path}")
    try:
        n_scenarios = section.getint("n_scenarios")
        d_x, d_y, n_samples = section.getint("d_x"), section.getint("d_y"), section.getint("n_samples")
    except (TypeError, ValueError) as e:
        raise DatasetFormatError(f"{level}: bad manifest counts ({e})")
    meta = {k[len("meta_") :]: v for k, v in section.items() if k.startswith("meta_")}
    table = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(table.columns) != RECORD_COLUMNS:
        raise DatasetFormatError(f"{path}: unexpected columns {list(table.columns)}")

    ids, xs, ys = [], [], []
    for scenario_id, rows in table.groupby("scenario_id", sort=False):
        x_rows = rows[rows["field"] == "x"]
        y_rows = rows[rows["field"] == "y"].sort_values("sample", key=lambda s: s.astype(int))
        if len(x_rows) != 1 or len(y_rows) != n_samples:
            raise DatasetFormatError(f"{path}: scenario {scenario_id} has {len(x_rows)} x rows and {len(y_rows)} samples")
        x = _parse_values(x_rows["values"].iloc[0])
        y = [_parse_values(v) for v in y_rows["values"]]
        if len(x) != d_x or any(len(v) != d_y for v in y):
            raise DatasetFormatError(f"{path}: scenario {scenario_id} widths disagree with the manifest (d_x={d_x}, d_y={d_y})")
        ids.append(scenario_id)
        xs.append(x)
        ys.append(y)
    if len(ids) != n_scenarios:
        raise DatasetFormatError(f"{path}: expected {n_scenarios} scenarios, found {len(ids)} (truncated?)")
    x = np.array(xs).reshape(n_scenarios, d_x)
    y = np.array(ys).reshape(n_scenarios, n_samples, d_y)
    try:
        return FidelityDataset(level, ids, x, y, meta)
    except ShapeError as e:
        raise DatasetFormatError(f"{path}: {e}")


def read_dataset(dir_path: str) -> Tuple[FidelityDataset, FidelityDataset, Optional[Split]]:
    """Load (low, high, split); split is None when none was stored."""
    manifest_path = os.path.join(dir_path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
    config = configparser.ConfigParser()
    try:
        config.read(manifest_path)
        version = config.getint("dataset", "format_version")
    except (configparser.Error, ValueError) as e:
        raise DatasetFormatError(f"{manifest_path}: {e}")
    if version != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(f"dataset format version {version} is not {DATASET_FORMAT_VERSION}")
    for level in LEVELS:
        if level not in config:
            raise DatasetFormatError(f"{manifest_path}: missing [{level}] section")
    low = _read_level(dir_path, "low", config["low"])
    high = _read_level(dir_path, "high", config["high"])

    split = None
    if "split" in config:
        section = config["split"]
        split = Split(
            section.get("mode"),
            section.getint("seed"),
            *[section.get(part, "").split() for part in ("low_train", "high_train", "val", "test")],
        )
        unknown = [i for i in split.low_train if i not in low] + [
            i for i in split.high_train + split.val + split.test if i not in high
        ]
        if unknown:
            raise DatasetFormatError(f"split refers to unknown scenario ids {unknown[:5]}")
    logging.debug(f"read dataset from {dir_path}: {len(low)} low, {len(high)} high scenarios")
    return low, high, split


def _read_grid(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fp:
        lines = [line.split() for line in fp if line.strip()]
    try:
        height, width = (int(v) for v in lines[0])
        rows = [[float(v) for v in line] for line in lines[1:]]
    except (IndexError, ValueError) as e:
        raise DatasetFormatError(f"{path}: malformed grid ({e})")
    if len(rows) != height or any(len(r) != width for r in rows):
        raise DatasetFormatError(f"{path}: ragged grid, header says {height}x{width}")
    return np.array(rows, dtype=np.float64).reshape(height, width)


def _grid_windows(
    directory: str, level: str, months_in: int, months_out: int, stride: int
) -> Tuple[List[str], np.ndarray, np.ndarray, Dict[str, str]]:
    paths = sorted(p for p in glob.glob(os.path.join(directory, "*")) if os.path.isfile(p))
    if len(paths) < months_in + months_out:
        raise DatasetFormatError(f"{directory}: {len(paths)} monthly grids, need at least {months_in + months_out}")
    months = [_read_grid(p) for p in paths]
    shapes = {m.shape for m in months}
    if len(shapes) != 1:
        raise DatasetFormatError(f"{directory}: monthly grids differ in shape {sorted(shapes)}")
    stack = np.stack(months)
    starts = range(0, len(months) - months_in - months_out + 1, stride)
    ids = [f"w{start:04d}" for start in starts]
    x = np.array([stack[s : s + months_in].reshape(-1) for s in starts])
    y = np.array([stack[s + months_in : s + months_in + months_out].reshape(1, -1) for s in starts])
    height, width = stack.shape[1:]
    meta = {
        "task": "grid",
        "height": str(height),
        "width": str(width),
        "months_in": str(months_in),
        "months_out": str(months_out),
        "stride": str(stride),
    }
    logging.info(f"{level}: {len(ids)} windows of {height}x{width} grids from {len(months)} months")
    return ids, x, y, meta


def ingest_grid(
    dir_path: str, months_in: int = GRID_MONTHS_IN, months_out: int = GRID_MONTHS_OUT, stride: Optional[int] = None
) -> Tuple[FidelityDataset, FidelityDataset]:
    """Turn monthly grids into windowed scenarios.

    Expects `dir_path/low/` and `dir_path/high/`, each holding one file per
    month, named so they sort chronologically. A file starts with a line
    "H W" followed by H rows of W numbers. Window k covers months
    [k * stride, k * stride + months_in + months_out); stride defaults to
    months_in + months_out (non-overlapping windows).
    """
    stride = stride if stride is not None else months_in + months_out
    if stride < 1 or months_in < 1 or months_out < 1:
        raise DatasetFormatError("months_in, months_out and stride must be at least 1")
    datasets = []
    for level in LEVELS:
        directory = os.path.join(dir_path, level)
        if not os.path.isdir(directory):
            raise FileNotFoundError(f"no {level}-fidelity grid directory at {directory}")
        ids, x, y, meta = _grid_windows(directory, level, months_in, months_out, stride)
        datasets.append(FidelityDataset(level, ids, x, y, meta))
    if datasets[0].ids != datasets[1].ids:
        raise DatasetFormatError("low and high grid directories cover different month counts")
    return datasets[0], datasets[1]


def synth_task(
    n_low: int, n_high: int, n_samples: int = 1, noise: float = 0.0, seed: int = 0
) -> Tuple[FidelityDataset, FidelityDataset]:
    """A cheap two-fidelity regression task with one scalar input a in [0, 1].

    low:  sin(2 pi a t) on 32 points of t in [0, 1]
    high: sin(2 pi a t) + 0.3 (a - 0.5) t^2 on 64 points
    Both fidelities share scenario ids s0000, s0001, ...; the first n_low
    appear at the low level and the first n_high at the high level.
    """
    if n_low < 1 or n_high < 1 or n_samples < 1:
        raise ShapeError("synth_task needs at least one scenario per level and one sample")
    n = max(n_low, n_high)
    ids = [f"s{i:04d}" for i in range(n)]
    a = derive_rng(seed, "synth-parameters").uniform(0.0, 1.0, n)
    t_low = np.linspace(0.0, 1.0, SYNTH_LOW_POINTS)
    t_high = np.linspace(0.0, 1.0, SYNTH_HIGH_POINTS)
    clean_low = np.sin(2.0 * np.pi * a[:, None] * t_low[None, :])
    clean_high = np.sin(2.0 * np.pi * a[:, None] * t_high[None, :]) + SYNTH_HIGH_CURVATURE * (a[:, None] - 0.5) * t_high**2

    def noisy(clean: np.ndarray, count: int, key: str) -> np.ndarray:
        draws = derive_rng(seed, key).standard_normal((count, n_samples, clean.shape[1]))
        return clean[:count, None, :] + noise * draws

    meta = {"task": "synth"}
    low = FidelityDataset("low", ids[:n_low], a[:n_low, None], noisy(clean_low, n_low, "synth-low"), meta)
    high = FidelityDataset("high", ids[:n_high], a[:n_high, None], noisy(clean_high, n_high, "synth-high"), meta)
    return low, high


def _simulate_pair(args) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    scenario, group_map, seed = args
    coarse = coarsen_scenario(scenario, group_map)
    x_high, y_high = featurize(scenario, simulate(scenario, seed))
    x_low, y_low = featurize(coarse, simulate(coarse, seed + 1))
    return x_low, y_low, x_high, y_high


def sir_task(
    n_scenarios: int,
    seed: int = 0,
    n_groups_high: int = HIGH_FIDELITY_GROUPS,
    n_groups_low: int = LOW_FIDELITY_GROUPS,
    horizon_days: int = DEFAULT_HORIZON_DAYS,
    n_samples: int = DEFAULT_SAMPLES,
    workers: int = 1,
) -> Tuple[FidelityDataset, FidelityDataset]:
    """Paired age-stratified SIR datasets.

    Every scenario is simulated at full age resolution (high fidelity) and
    after coarsening to n_groups_low brackets (low fidelity). With
    workers > 1 scenarios run in a process pool; results are merged in
    scenario order, so the output does not depend on scheduling.
    """
    scenarios = sample_scenario_family(n_scenarios, n_groups_high, seed, horizon_days, n_samples)
    group_map = default_group_map(n_groups_high, n_groups_low)
    seeds = derive_rng(seed, "sir-simulation").integers(0, 2**31 - 2, size=n_scenarios)
    jobs = [(s, group_map, int(k)) for s, k in zip(scenarios, seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_pair, jobs))
    else:
        results = [_simulate_pair(job) for job in jobs]
    ids = [f"sc{i:04d}" for i in range(n_scenarios)]

    def level(name: str, x_index: int, groups: int) -> FidelityDataset:
        x = np.array([r[x_index] for r in results]).reshape(n_scenarios, -1)
        y = np.array([r[x_index + 1] for r in results]).reshape(n_scenarios, n_samples, -1)
        meta = {"task": "sir", "n_groups": str(groups), "horizon_days": str(horizon_days)}
        return FidelityDataset(name, ids, x, y, meta)

    logging.info(f"simulated {n_scenarios} scenarios at {n_groups_high} and {n_groups_low} age groups")
    return level("low", 0, n_groups_low), level("high", 2, n_groups_high)
