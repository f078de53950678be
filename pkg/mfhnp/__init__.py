"""Multi-fidelity hierarchical neural process surrogates."""

__version__ = "0.1.0"

from .exceptions import *
