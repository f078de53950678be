"""Scenario, state and trajectory types, and scenario files."""

import json
import logging

import numpy as np

from dataclasses import dataclass
from typing import Any, Dict

from ..exceptions import DatasetFormatError, DomainError, ShapeError
from ..helpers import atomic_write_text
from .constants import DEFAULT_HORIZON_DAYS, DEFAULT_SAMPLES, SCENARIO_FORMAT_VERSION


@dataclass(eq=False)
class Scenario:
    """One epidemic setting.

    Attributes:
        r0: Basic reproduction number.
        gamma: Recovery rate per day.
        populations: Persons per age group.
        contacts: Mean daily contacts of an age-i person with age-j persons.
        initial_infected: Infected persons per age group on day 0.
        horizon_days: Number of simulated days.
        n_samples: Number of stochastic realizations.
    """

    r0: float
    gamma: float
    populations: np.ndarray
    contacts: np.ndarray
    initial_infected: np.ndarray
    horizon_days: int = DEFAULT_HORIZON_DAYS
    n_samples: int = DEFAULT_SAMPLES

    def __post_init__(self):
        self.r0 = float(self.r0)
        self.gamma = float(self.gamma)
        self.populations = np.asarray(self.populations).astype(np.int64)
        self.initial_infected = np.asarray(self.initial_infected).astype(np.int64)
        self.contacts = np.asarray(self.contacts, dtype=np.float64)
        self.horizon_days = int(self.horizon_days)
        self.n_samples = int(self.n_samples)
        a = len(self.populations)
        if self.populations.ndim != 1 or a == 0:
            raise ShapeError("populations must be a non-empty vector")
        if self.contacts.shape != (a, a):
            raise ShapeError(f"contacts must be {a}x{a}, got {self.contacts.shape}")
        if self.initial_infected.shape != (a,):
            raise ShapeError(f"initial_infected must have {a} entries")
        if np.any(self.populations <= 0):
            raise DomainError("every age group needs a positive population")
        if np.any(self.initial_infected < 0) or np.any(self.initial_infected > self.populations):
            raise DomainError("initial infections must lie between 0 and the group population")
        if np.any(self.contacts < 0) or not np.all(np.isfinite(self.contacts)):
            raise DomainError("contacts must be finite and non-negative")
        if not self.r0 > 0 or not self.gamma > 0:
            raise DomainError("r0 and gamma must be positive")
        if self.horizon_days < 0 or self.n_samples < 1:
            raise DomainError("horizon_days must be >= 0 and n_samples >= 1")

    @property
    def n_groups(self) -> int:
        return len(self.populations)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": SCENARIO_FORMAT_VERSION,
            "r0": self.r0,
            "gamma": self.gamma,
            "populations": self.populations.tolist(),
            "contacts": self.contacts.tolist(),
            "initial_infected": self.initial_infected.tolist(),
            "horizon_days": self.horizon_days,
            "n_samples": self.n_samples,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Scenario":
        if d.get("version") != SCENARIO_FORMAT_VERSION:
            raise DatasetFormatError(f"scenario format version {d.get('version')} is not {SCENARIO_FORMAT_VERSION}")
        fields = {k: v for k, v in d.items() if k != "version"}
        try:
            return cls(**fields)
        except TypeError as e:
            raise DatasetFormatError(f"malformed scenario record: {e}")


@dataclass(eq=False)
class EpiState:
    """Susceptible, infected and recovered persons per age group."""

    s: np.ndarray
    i: np.ndarray
    r: np.ndarray

    @classmethod
    def initial(cls, scenario: Scenario) -> "EpiState":
        return cls(
            scenario.populations - scenario.initial_infected,
            scenario.initial_infected.copy(),
            np.zeros(scenario.n_groups, dtype=np.int64),
        )

    @property
    def total(self) -> np.ndarray:
        return self.s + self.i + self.r


@dataclass(eq=False)
class TrajectorySet:
    """New infections per day: incidence[sample, day, group]."""

    incidence: np.ndarray

    @property
    def n_samples(self) -> int:
        return self.incidence.shape[0]

    @property
    def horizon_days(self) -> int:
        return self.incidence.shape[1]

    @property
    def n_groups(self) -> int:
        return self.incidence.shape[2]

    def ensemble_mean(self) -> np.ndarray:
        return self.incidence.mean(axis=0)


def write_scenario(path: str, scenario: Scenario) -> None:
    atomic_write_text(path, json.dumps(scenario.to_dict(), sort_keys=True, indent=1) + "\n")
    logging.debug(f"wrote scenario with {scenario.n_groups} groups to {path}")


def read_scenario(path: str) -> Scenario:
    with open(path, "r", encoding="utf-8") as fp:
        try:
            record = json.load(fp)
        except ValueError as e:
            raise DatasetFormatError(f"{path}: {e}")
    return Scenario.from_dict(record)
