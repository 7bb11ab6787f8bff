"""Scheduled modifications of transmission structure and population state.

Interventions act on the transmission matrix and on agent states, never on
model equations, so one mechanism serves both the agent-based and mean-field
runs. Matrix edits are applied by recomputing the effective matrix from the
unmodified base plus the set of currently active interventions (each with its
edge selection frozen at activation), which makes deactivation restore the
prior entries bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp

from .abm import (
    RECOVERED,
    SUSCEPTIBLE,
    AgentPopulation,
    derive_intervention_seed,
)
from .core import Trajectory, rk4_step, time_grid
from .meanfield import ProbabilityState, validate_probability_trajectory
from .network import TransmissionMatrix


class InterventionKind(str, Enum):
    DENSITY_REDUCTION = "density_reduction"
    COMPARTMENTALIZE = "compartmentalize"
    VACCINATE = "vaccinate"
    TRANSMISSION_SCALE = "transmission_scale"


_REVERSIBLE = {
    InterventionKind.DENSITY_REDUCTION,
    InterventionKind.COMPARTMENTALIZE,
    InterventionKind.TRANSMISSION_SCALE,
}


@dataclass
class Intervention:
    """One scheduled intervention.

    Activation is either a fixed time ``at`` or a state trigger
    ``trigger_infected_fraction`` (fires at the first step boundary where the
    infected fraction exceeds it). Reversible kinds may carry an absolute
    ``until`` (fixed activation only) or a relative ``duration``; vaccination
    is irreversible and accepts neither.
    """

    kind: InterventionKind
    at: float | None = None
    trigger_infected_fraction: float | None = None
    until: float | None = None
    duration: float | None = None
    fraction: float | None = None
    factor: float | None = None
    partition: np.ndarray | None = None
    cut_fraction: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        self.kind = InterventionKind(self.kind)
        if (self.at is None) == (self.trigger_infected_fraction is None):
            raise ValueError("give exactly one of 'at' and 'trigger_infected_fraction'")
        if self.at is not None and self.at < 0:
            raise ValueError("activation time must be nonnegative")
        if self.trigger_infected_fraction is not None and self.trigger_infected_fraction <= 0:
            raise ValueError("trigger fraction must be positive")
        if self.until is not None and self.duration is not None:
            raise ValueError("give at most one of 'until' and 'duration'")
        if self.until is not None:
            if self.at is None:
                raise ValueError("'until' needs a fixed activation time; use 'duration' with a trigger")
            if self.until <= self.at:
                raise ValueError("deactivation must come after activation")
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.kind not in _REVERSIBLE and (self.until is not None or self.duration is not None):
            raise ValueError(f"{self.kind.value} is irreversible and cannot be deactivated")
        if self.kind in (InterventionKind.DENSITY_REDUCTION, InterventionKind.VACCINATE):
            if self.fraction is None or not 0 <= self.fraction <= 1:
                raise ValueError(f"{self.kind.value} needs a fraction in [0, 1]")
        if self.kind is InterventionKind.TRANSMISSION_SCALE:
            if self.factor is None or self.factor < 0:
                raise ValueError("transmission_scale needs a factor >= 0")
        if self.kind is InterventionKind.COMPARTMENTALIZE:
            if self.partition is None:
                raise ValueError("compartmentalize needs a partition")
            self.partition = np.asarray(self.partition, dtype=np.int64)
            if self.cut_fraction is None or not 0 <= self.cut_fraction <= 1:
                raise ValueError("compartmentalize needs a cut_fraction in [0, 1]")


@dataclass
class HealthcareCapacity:
    """Death-rate multiplier active while infections exceed the capacity.

    Realizes the capacity side of the strategy list for runs with deaths:
    whenever the infected count exceeds ``infected_threshold_fraction`` of
    the population at a step boundary, every agent's death rate is scaled by
    ``death_rate_multiplier`` for that step.
    """

    infected_threshold_fraction: float
    death_rate_multiplier: float

    def __post_init__(self) -> None:
        if self.infected_threshold_fraction < 0:
            raise ValueError("capacity threshold must be nonnegative")
        if self.death_rate_multiplier < 1:
            raise ValueError("overload multiplier must be >= 1")


@dataclass
class InterventionSchedule:
    """Time-ordered interventions; fixed-time entries are sorted on construction."""

    entries: list[Intervention] = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.entries = sorted(
            self.entries,
            key=lambda e: (e.at is None, e.at if e.at is not None else 0.0),
        )
        validate_schedule(self)


def validate_schedule(schedule: InterventionSchedule) -> None:
    """Reject schedules with ambiguous irreversible interventions."""
    fixed_times = [
        e.at for e in schedule.entries if e.kind is InterventionKind.VACCINATE and e.at is not None
    ]
    if len(fixed_times) != len(set(fixed_times)):
        raise ValueError("two irreversible interventions share an activation time")
    triggers = [
        e.trigger_infected_fraction
        for e in schedule.entries
        if e.kind is InterventionKind.VACCINATE and e.trigger_infected_fraction is not None
    ]
    if len(triggers) != len(set(triggers)):
        raise ValueError("two irreversible interventions share a trigger threshold")


def contiguous_partition(sizes, n: int) -> np.ndarray:
    """Community labels of contiguous blocks with the given sizes."""
    sizes = [int(s) for s in sizes]
    if any(s <= 0 for s in sizes) or sum(sizes) != n:
        raise ValueError(f"community sizes {sizes} must be positive and sum to {n}")
    return np.repeat(np.arange(len(sizes), dtype=np.int64), sizes)


def _symmetric_nonzero_pairs(t_matrix: TransmissionMatrix) -> np.ndarray:
    """Unordered off-diagonal pairs (i < j) where either direction is nonzero."""
    if t_matrix.is_sparse:
        coo = t_matrix.matrix.tocoo()
        keep = coo.row != coo.col
        low = np.minimum(coo.row[keep], coo.col[keep])
        high = np.maximum(coo.row[keep], coo.col[keep])
        return np.unique(np.column_stack([low, high]), axis=0).astype(np.int64)
    mask = t_matrix.matrix != 0
    mask = mask | mask.T
    rows, cols = np.nonzero(np.triu(mask, k=1))
    return np.column_stack([rows, cols]).astype(np.int64)


def _choose_pairs(pairs: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    count = int(round(fraction * pairs.shape[0]))
    if count == 0:
        return pairs[:0]
    rng = np.random.default_rng(seed)
    idx = rng.choice(pairs.shape[0], size=count, replace=False)
    return pairs[np.sort(idx)]


def _zero_pairs(matrix, pairs: np.ndarray):
    if pairs.size == 0:
        return matrix
    if sp.issparse(matrix):
        edited = sp.lil_array(matrix)
        edited[pairs[:, 0], pairs[:, 1]] = 0
        edited[pairs[:, 1], pairs[:, 0]] = 0
        result = sp.csr_array(edited)
        result.eliminate_zeros()
        return result
    matrix = matrix.copy()
    matrix[pairs[:, 0], pairs[:, 1]] = 0.0
    matrix[pairs[:, 1], pairs[:, 0]] = 0.0
    return matrix


def apply_density_reduction(
    t_matrix: TransmissionMatrix, fraction: float, seed: int
) -> TransmissionMatrix:
    """Zero a uniformly random ``fraction`` of the off-diagonal edge pairs (both directions)."""
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    pairs = _symmetric_nonzero_pairs(t_matrix)
    chosen = _choose_pairs(pairs, fraction, seed)
    return TransmissionMatrix(_zero_pairs(t_matrix.matrix, chosen))


def apply_compartmentalization(
    t_matrix: TransmissionMatrix,
    partition: np.ndarray,
    cut_fraction: float,
    seed: int,
) -> TransmissionMatrix:
    """Zero ``cut_fraction`` of the edges linking different communities."""
    if not 0 <= cut_fraction <= 1:
        raise ValueError("cut_fraction must lie in [0, 1]")
    partition = np.asarray(partition, dtype=np.int64)
    if partition.shape != (t_matrix.n_agents,):
        raise ValueError(
            f"partition must assign one community per agent "
            f"({t_matrix.n_agents}), got shape {partition.shape}"
        )
    pairs = _symmetric_nonzero_pairs(t_matrix)
    inter = pairs[partition[pairs[:, 0]] != partition[pairs[:, 1]]]
    chosen = _choose_pairs(inter, cut_fraction, seed)
    return TransmissionMatrix(_zero_pairs(t_matrix.matrix, chosen))


def apply_transmission_scale(t_matrix: TransmissionMatrix, factor: float) -> TransmissionMatrix:
    """Scale every transmission rate by a nonnegative factor."""
    if factor < 0:
        raise ValueError("factor must be nonnegative")
    return TransmissionMatrix(t_matrix.matrix * factor)


def apply_vaccination(target, fraction: float, seed: int | None = None):
    """Move susceptible mass to recovered; irreversible.

    For an AgentPopulation a uniformly random ``fraction`` of the currently
    susceptible agents switches S -> R (seeded). For a ProbabilityState the
    per-agent susceptible mass fraction moves p_s -> p_r deterministically.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must lie in [0, 1]")
    if isinstance(target, AgentPopulation):
        result = target.copy()
        susceptible = np.flatnonzero(result.states == SUSCEPTIBLE)
        count = int(round(fraction * susceptible.size))
        if count:
            rng = np.random.default_rng(seed)
            chosen = rng.choice(susceptible, size=count, replace=False)
            result.states[chosen] = RECOVERED
        return result
    if isinstance(target, ProbabilityState):
        moved = fraction * target.p_s
        return ProbabilityState(
            p_s=target.p_s - moved,
            p_i=target.p_i.copy(),
            p_r=target.p_r + moved,
        )
    raise TypeError(f"cannot vaccinate {type(target).__name__}")


class ScheduleRunState:
    """Per-run schedule execution: trigger evaluation, activation, reversal.

    Owns the run's intervention log. Every run (each Monte Carlo replica)
    creates its own instance, so trigger times may differ between replicas.
    """

    def __init__(self, schedule: InterventionSchedule, base_seed: int | None = None):
        validate_schedule(schedule)
        self.pending = list(enumerate(schedule.entries))
        self.active: list[dict] = []
        self.log: list[dict] = []
        self.base_seed = 0 if base_seed is None else int(base_seed)
        self.base_matrix: TransmissionMatrix | None = None

    @property
    def exhausted(self) -> bool:
        return not self.pending and not any(
            record["deactivation"] is not None for record in self.active
        )

    def _seed_for(self, index: int, entry: Intervention) -> int:
        if entry.seed is not None:
            return entry.seed
        return derive_intervention_seed(self.base_seed, index)

    def _freeze(self, index: int, entry: Intervention, current: TransmissionMatrix) -> dict:
        """Compute and store the matrix edit of an entry at its activation."""
        seed = self._seed_for(index, entry)
        record = {"index": index, "entry": entry, "seed": seed, "deactivation": None}
        if entry.kind is InterventionKind.TRANSMISSION_SCALE:
            record["factor"] = entry.factor
        elif entry.kind is InterventionKind.DENSITY_REDUCTION:
            pairs = _symmetric_nonzero_pairs(current)
            record["pairs"] = _choose_pairs(pairs, entry.fraction, seed)
        elif entry.kind is InterventionKind.COMPARTMENTALIZE:
            if entry.partition.shape != (current.n_agents,):
                raise ValueError("partition must assign one community per agent")
            pairs = _symmetric_nonzero_pairs(current)
            inter = pairs[entry.partition[pairs[:, 0]] != entry.partition[pairs[:, 1]]]
            record["pairs"] = _choose_pairs(inter, entry.cut_fraction, seed)
        return record

    def _effective_matrix(self) -> TransmissionMatrix:
        matrix = self.base_matrix.matrix
        if sp.issparse(matrix):
            matrix = sp.csr_array(matrix, copy=True)
        else:
            matrix = matrix.copy()
        for record in self.active:
            if "factor" in record:
                matrix = matrix * record["factor"]
        for record in self.active:
            if "pairs" in record:
                matrix = _zero_pairs(matrix, record["pairs"])
        return TransmissionMatrix(matrix)

    def _log_event(self, t: float, action: str, record: dict) -> None:
        entry = record["entry"]
        event = {
            "time": float(t),
            "action": action,
            "kind": entry.kind.value,
            "entry": record["index"],
        }
        for name in ("fraction", "factor", "cut_fraction"):
            value = getattr(entry, name)
            if value is not None:
                event[name] = value
        if entry.kind is not InterventionKind.TRANSMISSION_SCALE:
            event["seed"] = record["seed"]
        self.log.append(event)

    def process_boundary(
        self,
        t: float,
        infected_fraction: float,
        current_matrix: TransmissionMatrix,
        vaccinate,
    ) -> TransmissionMatrix | None:
        """Apply due deactivations and activations; returns a new matrix when edited."""
        if self.base_matrix is None:
            self.base_matrix = current_matrix
        dirty = False
        still_active = []
        for record in self.active:
            if record["deactivation"] is not None and t >= record["deactivation"] - 1e-12:
                self._log_event(t, "reverted", record)
                dirty = True
            else:
                still_active.append(record)
        self.active = still_active

        remaining = []
        for index, entry in self.pending:
            if entry.at is not None:
                fire = entry.at <= t + 1e-12
            else:
                fire = infected_fraction > entry.trigger_infected_fraction
            if not fire:
                remaining.append((index, entry))
                continue
            if entry.kind is InterventionKind.VACCINATE:
                vaccinate(entry, self._seed_for(index, entry))
                self._log_event(t, "applied", {"index": index, "entry": entry, "seed": self._seed_for(index, entry)})
                continue
            record = self._freeze(index, entry, current_matrix)
            if entry.until is not None:
                record["deactivation"] = entry.until
            elif entry.duration is not None:
                record["deactivation"] = t + entry.duration
            self.active.append(record)
            self._log_event(t, "applied", record)
            dirty = True
        self.pending = remaining

        if dirty:
            return self._effective_matrix()
        return None

    def process_boundary_abm(self, t: float, engine) -> None:
        infected_fraction = engine.counts[1] / engine.pop.n_agents

        def vaccinate(entry, seed):
            susceptible = np.flatnonzero(engine.pop.states == SUSCEPTIBLE)
            count = int(round(entry.fraction * susceptible.size))
            if count:
                rng = np.random.default_rng(seed)
                chosen = rng.choice(susceptible, size=count, replace=False)
                engine.pop.states[chosen] = RECOVERED
                engine.notify_state_edit()

        new_matrix = self.process_boundary(t, infected_fraction, engine.t_matrix, vaccinate)
        if new_matrix is not None:
            engine.swap_matrix(new_matrix)


def run_scheduled(
    model_kind: str,
    initial_state,
    t_matrix: TransmissionMatrix,
    schedule: InterventionSchedule,
    dt: float,
    t_end: float,
    seed: int | None = None,
    gamma_vec: np.ndarray | None = None,
    capacity_rule: HealthcareCapacity | None = None,
) -> Trajectory:
    """Run an agent-based or mean-field simulation under a schedule.

    Interventions take effect at the first step boundary at or after their
    activation time (triggers are evaluated at boundaries before stepping).
    The returned trajectory carries compartment counts and the intervention
    log in its metadata; with an empty schedule the result is bit-identical
    to the corresponding unscheduled run. ``capacity_rule`` (agent-based
    runs with deaths only) scales death rates while infections exceed the
    healthcare capacity.
    """
    if model_kind == "abm":
        from .abm import AgentPopulation, _columns, _run_counts

        if not isinstance(initial_state, AgentPopulation):
            raise TypeError("abm runs need an AgentPopulation initial state")
        if seed is None:
            raise ValueError("abm runs need a seed")
        times = time_grid(t_end, dt)
        pop = initial_state.copy()
        rng = np.random.default_rng(seed)
        counts, final_pop, run_state = _run_counts(
            pop, t_matrix, times, rng, schedule=schedule, schedule_seed=seed,
            capacity_rule=capacity_rule,
        )
        meta = {
            "model": "abm",
            "seed": seed,
            "dt": dt,
            "n_agents": initial_state.n_agents,
            "final_states": final_pop.states.copy(),
            "intervention_log": run_state.log if run_state is not None else [],
        }
        return Trajectory(times, counts, columns=_columns(initial_state), meta=meta)

    if model_kind == "meanfield":
        if not isinstance(initial_state, ProbabilityState):
            raise TypeError("meanfield runs need a ProbabilityState initial state")
        if capacity_rule is not None:
            raise ValueError("healthcare capacity applies to runs with deaths; mean-field has none")
        if gamma_vec is None:
            raise ValueError("meanfield runs need gamma_vec")
        gamma_vec = np.asarray(gamma_vec, dtype=float)
        if gamma_vec.shape != (initial_state.n_agents,):
            raise ValueError("gamma_vec must hold one rate per agent")
        n = initial_state.n_agents
        if t_matrix.n_agents != n:
            raise ValueError("transmission matrix size does not match the state")
        times = time_grid(t_end, dt)
        y = initial_state.as_array()
        states = np.empty((times.size,) + y.shape)
        run_state = ScheduleRunState(schedule, base_seed=seed)
        holder = [t_matrix]

        def rhs(t, state):
            infection = state[0] * holder[0].transpose_matvec(state[1])
            recovery = gamma_vec * state[1]
            return np.stack([-infection, infection - recovery, recovery])

        for idx in range(times.size):
            infected_fraction = float(y[1].sum()) / n

            def vaccinate(entry, seed_value, state=y):
                moved = entry.fraction * state[0]
                state[0] -= moved
                state[2] += moved

            new_matrix = run_state.process_boundary(
                times[idx], infected_fraction, holder[0], vaccinate
            )
            if new_matrix is not None:
                holder[0] = new_matrix
            states[idx] = y
            if idx < times.size - 1:
                y = rk4_step(rhs, times[idx], y, times[idx + 1] - times[idx])
        validate_probability_trajectory(states, dt)
        counts = states.sum(axis=2)
        meta = {
            "model": "meanfield",
            "dt": dt,
            "n_agents": n,
            "intervention_log": run_state.log,
        }
        return Trajectory(times, counts, columns=("S", "I", "R"), meta=meta)

    raise ValueError(f"model_kind must be 'abm' or 'meanfield', got {model_kind!r}")
