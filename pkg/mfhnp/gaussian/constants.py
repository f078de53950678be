"""Gaussian constants."""

import math

# Lower bound added to every softplus-parameterized variance.
VARIANCE_FLOOR = 1e-6

LOG_TWO_PI = math.log(2.0 * math.pi)
