"""Neural-process model constants."""

FIDELITIES = ["low", "high"]

AGGREGATIONS = ["ma", "ba"]

# sf: high fidelity only. mf: high fidelity decoder fed with paired low outputs.
# hnp-*: hierarchical latent model; the suffix picks how z_l reaches the high encoder.
VARIANTS = ["sf", "mf", "hnp-as", "hnp-mean", "hnp-meanstd", "hnp-mc"]

HIERARCHICAL_VARIANTS = ["hnp-as", "hnp-mean", "hnp-meanstd", "hnp-mc"]

FRIENDLY_VARIANT_NAMES = {
    "sf": "SF-NP",
    "mf": "MF-NP",
    "hnp-as": "MF-HNP (ancestral sampling)",
    "hnp-mean": "MF-HNP (mean)",
    "hnp-meanstd": "MF-HNP (mean and std)",
    "hnp-mc": "MF-HNP (nested Monte Carlo)",
}

DEFAULT_SAMPLES = 8
DEFAULT_MC_SAMPLES = 4
