"""Dataset constants."""

DATASET_FORMAT_VERSION = 1

MANIFEST_NAME = "manifest.ini"
RECORD_FILE_TEMPLATE = "{level}.records.csv"
RECORD_COLUMNS = ["scenario_id", "field", "sample", "values"]

SPLIT_MODES = ["nested", "non_nested"]

SPLIT_PRESETS = {
    "as-sir": {"n_ids": 109, "n_candidates": 31, "n_train_low": 26, "n_train_high": 5, "n_val": 26, "n_test": 52},
    "climate": {"n_ids": 219, "n_candidates": 119, "n_train_low": 87, "n_train_high": 32, "n_val": 50, "n_test": 50},
}

GRID_MONTHS_IN = 6
GRID_MONTHS_OUT = 6

SYNTH_LOW_POINTS = 32
SYNTH_HIGH_POINTS = 64
SYNTH_HIGH_CURVATURE = 0.3
