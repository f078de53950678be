"""Experiment constants."""

NLL_MODES = ["moment", "mixture"]

EVAL_PARTS = ["val", "test"]

DEFAULT_EVAL_LATENT_SAMPLES = 32

# Fraction of a batch's scenarios used as context.
CONTEXT_FRACTION_RANGE = (0.2, 0.8)

TRAIN_PRESETS = {
    "as-sir": {"learning_rate": 1e-3, "batch_size": 128, "patience": 1000, "log_space_outputs": True},
    "climate": {"learning_rate": 5e-3, "batch_size": 32, "patience": 250, "log_space_outputs": False},
}

# Age groups whose trajectories are exported by default.
EXPORT_AGE_GROUPS = [10, 30, 50, 70]

FRIENDLY_METRIC_NAMES = {"mae": "MAE", "nll": "NLL"}
