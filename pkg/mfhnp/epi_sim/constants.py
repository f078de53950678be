"""Simulator constants."""

DEFAULT_HORIZON_DAYS = 100
DEFAULT_SAMPLES = 30

HIGH_FIDELITY_GROUPS = 85
LOW_FIDELITY_GROUPS = 18

# Scenario family ranges.
R0_RANGE = (1.2, 3.0)
GAMMA_RANGE = (0.1, 0.25)
POPULATION_RANGE = (1e4, 1e6)
BAND_CONTACT_RANGE = (0.2, 1.0)
ASSORTATIVE_CONTACT_RANGE = (1.0, 3.0)
INITIAL_INFECTED = 10
# Share of every group infected on day 0 under prevalence seeding (log-uniform).
INITIAL_PREVALENCE_RANGE = (1e-3, 1e-2)
SEEDING_MODES = ["prevalence", "single"]

POWER_ITERATION_TOLERANCE = 1e-10
POWER_ITERATION_MAX_STEPS = 100000

SCENARIO_FORMAT_VERSION = 1
