"""Numerics constants."""

ACTIVATIONS = ["relu", "tanh"]

ADAM_DEFAULTS = {"learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8}

CHECKPOINT_MAGIC = b"MFHNP-CKPT\n"
CHECKPOINT_VERSION = 1
