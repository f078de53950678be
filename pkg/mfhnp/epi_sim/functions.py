"""Age-stratified chain-binomial SIR simulation.

Each day, group i sees the force of infection

    lambda_i = beta * sum_j M[i, j] * I_j / N_j

and draws new infections ~ Binomial(S_i, 1 - exp(-lambda_i)) and recoveries
~ Binomial(I_i, 1 - exp(-gamma)). Counts are integers, so S + I + R = N
holds exactly at every step.
"""

import logging

import numpy as np

from typing import List, Optional, Tuple

from ..exceptions import ConfigError, DomainError, ShapeError
from ..helpers import derive_rng
from .constants import (
    ASSORTATIVE_CONTACT_RANGE,
    BAND_CONTACT_RANGE,
    DEFAULT_HORIZON_DAYS,
    DEFAULT_SAMPLES,
    GAMMA_RANGE,
    INITIAL_INFECTED,
    INITIAL_PREVALENCE_RANGE,
    POPULATION_RANGE,
    POWER_ITERATION_MAX_STEPS,
    POWER_ITERATION_TOLERANCE,
    R0_RANGE,
    SEEDING_MODES,
)
from .scenarios import EpiState, Scenario, TrajectorySet


def next_generation_kernel(contacts: np.ndarray, populations: np.ndarray) -> np.ndarray:
    """G[i, j] = M[i, j] * N_i / N_j."""
    populations = np.asarray(populations, dtype=np.float64)
    return np.asarray(contacts, dtype=np.float64) * populations[:, None] / populations[None, :]


def spectral_radius(
    matrix: np.ndarray, tolerance: float = POWER_ITERATION_TOLERANCE, max_steps: int = POWER_ITERATION_MAX_STEPS
) -> float:
    """Perron root of a non-negative matrix by power iteration.

    The iteration runs on matrix + c*I with c half the largest row sum, so
    periodic matrices converge too; the root is read off the original matrix.
    """
    g = np.asarray(matrix, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ShapeError(f"spectral radius needs a square matrix, got {g.shape}")
    if np.any(g < 0):
        raise DomainError("power iteration here assumes a non-negative matrix")
    if not np.any(g):
        return 0.0
    shift = 0.5 * g.sum(axis=1).max()
    shifted = g + shift * np.eye(len(g))
    v = np.full(len(g), 1.0 / len(g))
    estimate = 0.0
    for _ in range(max_steps):
        w = shifted @ v
        total = w.sum()
        v_next = w / total
        converged = abs(total - estimate) <= tolerance * total and np.max(np.abs(v_next - v)) <= tolerance
        v, estimate = v_next, total
        if converged:
            break
    else:
        logging.warning(f"power iteration did not converge in {max_steps} steps")
    return float((g @ v).sum())


def beta_from_r0(scenario: Scenario) -> float:
    """Transmissibility giving the scenario its R0: beta = r0 * gamma / rho(G)."""
    rho = spectral_radius(next_generation_kernel(scenario.contacts, scenario.populations))
    if rho == 0.0:
        raise DomainError("contact matrix is all zeros, R0 cannot be reached")
    return scenario.r0 * scenario.gamma / rho


def force_of_infection(
    beta: float, contacts: np.ndarray, infected: np.ndarray, populations: np.ndarray
) -> np.ndarray:
    return beta * (contacts @ (infected / populations))


def step(
    state: EpiState,
    beta: float,
    gamma: float,
    contacts: np.ndarray,
    populations: np.ndarray,
    rng: np.random.Generator,
) -> Tuple[EpiState, np.ndarray]:
    """Advance one day. Returns the next state and the new infections per group."""
    lam = force_of_infection(beta, contacts, state.i, populations)
    p_infect = np.clip(-np.expm1(-lam), 0.0, 1.0)
    p_recover = -np.expm1(-gamma)
    new_infections = rng.binomial(state.s, p_infect)
    recoveries = rng.binomial(state.i, p_recover)
    next_state = EpiState(state.s - new_infections, state.i + new_infections - recoveries, state.r + recoveries)
    return next_state, new_infections


def check_conservation(state: EpiState, populations: np.ndarray) -> int:
    """Largest absolute deviation of S + I + R from N over the groups."""
    return int(np.max(np.abs(state.total - np.asarray(populations, dtype=np.int64))))


def simulate(scenario: Scenario, seed: int) -> TrajectorySet:
    """Run the scenario's n_samples realizations.

    Sample s draws from a stream derived from (seed, s), so any one sample
    can be regenerated on its own.
    """
    beta = beta_from_r0(scenario)
    incidence = np.zeros((scenario.n_samples, scenario.horizon_days, scenario.n_groups), dtype=np.int64)
    for sample_index in range(scenario.n_samples):
        rng = derive_rng(seed, sample_index)
        state = EpiState.initial(scenario)
        for day in range(scenario.horizon_days):
            state, incidence[sample_index, day] = step(
                state, beta, scenario.gamma, scenario.contacts, scenario.populations, rng
            )
    logging.debug(
        f"simulated {scenario.n_samples} x {scenario.horizon_days} days over {scenario.n_groups} groups (beta={beta:.4g})"
    )
    return TrajectorySet(incidence)


def ode_incidence(scenario: Scenario, substeps: int = 1) -> np.ndarray:
    """Deterministic daily incidence (T, A) of S' = -lambda S, I' = lambda S - gamma I.

    Integrated with exponential Euler steps of 1/substeps days, holding
    lambda fixed within a step; with substeps=1 this is the mean-field map of
    the chain-binomial simulator.
    """
    beta = beta_from_r0(scenario)
    h = 1.0 / substeps
    populations = scenario.populations.astype(np.float64)
    s = (scenario.populations - scenario.initial_infected).astype(np.float64)
    i = scenario.initial_infected.astype(np.float64)
    out = np.zeros((scenario.horizon_days, scenario.n_groups))
    for day in range(scenario.horizon_days):
        for _ in range(substeps):
            lam = force_of_infection(beta, scenario.contacts, i, populations)
            new = s * -np.expm1(-lam * h)
            recovered = i * -np.expm1(-scenario.gamma * h)
            s = s - new
            i = i + new - recovered
            out[day] += new
    return out


def _validate_group_map(group_map, n_fine: int) -> Tuple[np.ndarray, int]:
    group_map = np.asarray(group_map, dtype=np.int64)
    if group_map.shape != (n_fine,):
        raise ShapeError(f"group map must assign all {n_fine} fine groups")
    if np.any(group_map < 0) or np.any(np.diff(group_map) < 0):
        raise DomainError("group map must be non-negative and monotone (contiguous brackets)")
    n_coarse = int(group_map.max()) + 1
    counts = np.bincount(group_map, minlength=n_coarse)
    if np.any(counts == 0):
        raise DomainError(f"coarse groups {np.flatnonzero(counts == 0).tolist()} are empty")
    return group_map, n_coarse


def default_group_map(n_fine: int, n_coarse: int) -> np.ndarray:
    """Contiguous near-equal brackets; the wider ones come first."""
    if not 1 <= n_coarse <= n_fine:
        raise DomainError(f"cannot split {n_fine} groups into {n_coarse} non-empty brackets")
    chunks = np.array_split(np.arange(n_fine), n_coarse)
    return np.concatenate([np.full(len(chunk), k, dtype=np.int64) for k, chunk in enumerate(chunks)])


def coarsen(
    contacts_hi: np.ndarray, populations_hi: np.ndarray, group_map
) -> Tuple[np.ndarray, np.ndarray]:
    """Aggregate a contact structure onto coarse age brackets.

    N_a = sum of N_i over bracket a, and
    M_lo[a, b] = sum_{i in a} (N_i / N_a) * sum_{j in b} M_hi[i, j],
    which preserves total contact volume.
    """
    populations_hi = np.asarray(populations_hi, dtype=np.int64)
    contacts_hi = np.asarray(contacts_hi, dtype=np.float64)
    group_map, n_coarse = _validate_group_map(group_map, len(populations_hi))
    onehot = np.zeros((len(group_map), n_coarse))
    onehot[np.arange(len(group_map)), group_map] = 1.0
    populations_lo = np.bincount(group_map, weights=populations_hi, minlength=n_coarse).round().astype(np.int64)
    weights = populations_hi / populations_lo[group_map]
    contacts_lo = onehot.T @ (weights[:, None] * (contacts_hi @ onehot))
    return contacts_lo, populations_lo


def coarsen_scenario(scenario: Scenario, group_map) -> Scenario:
    contacts, populations = coarsen(scenario.contacts, scenario.populations, group_map)
    group_map = np.asarray(group_map, dtype=np.int64)
    infected = np.bincount(group_map, weights=scenario.initial_infected, minlength=len(populations))
    return Scenario(
        scenario.r0,
        scenario.gamma,
        populations,
        contacts,
        infected.round().astype(np.int64),
        scenario.horizon_days,
        scenario.n_samples,
    )


def aggregate_incidence(trajectories: TrajectorySet, group_map) -> TrajectorySet:
    """Sum fine-group incidence into coarse brackets."""
    group_map, n_coarse = _validate_group_map(group_map, trajectories.n_groups)
    onehot = np.zeros((len(group_map), n_coarse), dtype=np.int64)
    onehot[np.arange(len(group_map)), group_map] = 1
    return TrajectorySet(trajectories.incidence @ onehot)


def feature_width(n_groups: int) -> int:
    return 2 + 2 * n_groups + n_groups * n_groups


def featurize(scenario: Scenario, trajectories: TrajectorySet) -> Tuple[np.ndarray, np.ndarray]:
    """Scenario inputs and per-sample outputs as flat vectors.

    x = [r0, gamma] + initial_infected / N + N / sum(N) + contacts (row-major)
    y[s] = incidence of sample s, (day, group) row-major

    Returns:
        x of length feature_width(A) and y of shape (S, T * A).
    """
    if trajectories.n_groups != scenario.n_groups:
        raise ShapeError("trajectories and scenario disagree on the number of groups")
    populations = scenario.populations.astype(np.float64)
    x = np.concatenate(
        [
            [scenario.r0, scenario.gamma],
            scenario.initial_infected / populations,
            populations / populations.sum(),
            scenario.contacts.reshape(-1),
        ]
    )
    y = trajectories.incidence.reshape(trajectories.n_samples, -1).astype(np.float64)
    return x, y


def defeaturize(
    x: np.ndarray,
    total_population: int,
    horizon_days: int = DEFAULT_HORIZON_DAYS,
    n_samples: int = DEFAULT_SAMPLES,
    n_groups: Optional[int] = None,
) -> Scenario:
    """Rebuild a scenario from its feature vector and total population."""
    x = np.asarray(x, dtype=np.float64)
    if n_groups is None:
        n_groups = int(round(np.sqrt(len(x) - 1) - 1))
    if len(x) != feature_width(n_groups):
        raise ShapeError(f"feature vector of length {len(x)} does not describe {n_groups} groups")
    a = n_groups
    populations = np.round(x[2 + a : 2 + 2 * a] * total_population).astype(np.int64)
    infected = np.round(x[2 : 2 + a] * populations).astype(np.int64)
    return Scenario(x[0], x[1], populations, x[2 + 2 * a :].reshape(a, a), infected, horizon_days, n_samples)


def sample_scenario_family(
    n_scenarios: int,
    n_groups: int,
    seed: int,
    horizon_days: int = DEFAULT_HORIZON_DAYS,
    n_samples: int = DEFAULT_SAMPLES,
    seeding: str = "prevalence",
) -> List[Scenario]:
    """Synthetic scenarios: banded symmetric contacts with an assortative diagonal,
    log-uniform populations and uniform R0 and gamma.

    Args:
        seeding: "prevalence" infects the same log-uniform share of every group
            on day 0, so coarsening the scenario keeps the initial state exact.
            "single" puts INITIAL_INFECTED people in one random group.
    """
    if seeding not in SEEDING_MODES:
        raise ConfigError(f"unknown seeding '{seeding}', expected one of {SEEDING_MODES}")
    rng = derive_rng(seed, "scenario-family")
    band = max(1, n_groups // 8)
    rows, cols = np.indices((n_groups, n_groups))
    in_band = np.abs(rows - cols) <= band
    scenarios = []
    for _ in range(n_scenarios):
        log_low, log_high = np.log(POPULATION_RANGE[0]), np.log(POPULATION_RANGE[1])
        populations = np.round(np.exp(rng.uniform(log_low, log_high, n_groups))).astype(np.int64)
        contacts = np.zeros((n_groups, n_groups))
        contacts[in_band] = rng.uniform(*BAND_CONTACT_RANGE, size=int(in_band.sum()))
        contacts = 0.5 * (contacts + contacts.T)
        contacts[np.diag_indices(n_groups)] += rng.uniform(*ASSORTATIVE_CONTACT_RANGE, n_groups)
        if seeding == "prevalence":
            prevalence = np.exp(rng.uniform(*np.log(INITIAL_PREVALENCE_RANGE)))
            infected = np.maximum(np.round(prevalence * populations), 1).astype(np.int64)
        else:
            infected = np.zeros(n_groups, dtype=np.int64)
            seeded = int(rng.integers(n_groups))
            infected[seeded] = min(INITIAL_INFECTED, populations[seeded])
        scenarios.append(
            Scenario(
                rng.uniform(*R0_RANGE),
                rng.uniform(*GAMMA_RANGE),
                populations,
                contacts,
                infected,
                horizon_days,
                n_samples,
            )
        )
    logging.info(f"sampled {n_scenarios} scenarios over {n_groups} age groups ({seeding} seeding)")
    return scenarios
