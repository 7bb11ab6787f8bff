"""Stochastic per-agent simulation on contact networks, with ensemble analysis.

Updating is synchronous in discrete steps of length dt. A susceptible agent
with infection hazard h (the summed rates from currently infected sources)
becomes infected with probability 1 - exp(-h * dt); an infected agent leaves
the I state with probability 1 - exp(-(gamma_i + mu_i) * dt), the exit split
between recovery and death in proportion to the rates. Newly infected agents
become infectious at the next step, so results do not depend on update order.
One uniform draw per agent per step (plus one for the death split when deaths
are enabled) is consumed in agent-index order, which makes runs bit-stable.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Trajectory, atomic_write_text
from .network import TransmissionMatrix

SUSCEPTIBLE, INFECTED, RECOVERED, DEAD = 0, 1, 2, 3


@dataclass
class AgentPopulation:
    """Discrete per-agent states plus per-agent recovery (and optional death) rates."""

    states: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=np.int8)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.mu is not None:
            self.mu = np.asarray(self.mu, dtype=float)
        if self.states.ndim != 1 or self.states.size == 0:
            raise ValueError("states must be a non-empty 1-D array")
        if self.gamma.shape != self.states.shape:
            raise ValueError("gamma must hold one rate per agent")
        if self.gamma.min() < 0:
            raise ValueError("recovery rates must be nonnegative")
        allowed = DEAD if self.mu is not None else RECOVERED
        if self.states.min() < SUSCEPTIBLE or self.states.max() > allowed:
            raise ValueError("invalid agent state codes")
        if self.mu is not None:
            if self.mu.shape != self.states.shape:
                raise ValueError("mu must hold one rate per agent")
            if self.mu.min() < 0:
                raise ValueError("death rates must be nonnegative")

    @property
    def n_agents(self) -> int:
        return self.states.size

    @property
    def with_deaths(self) -> bool:
        return self.mu is not None

    def counts(self) -> tuple[int, int, int, int]:
        tallies = np.bincount(self.states, minlength=4)
        return int(tallies[0]), int(tallies[1]), int(tallies[2]), int(tallies[3])

    def copy(self) -> "AgentPopulation":
        return AgentPopulation(
            states=self.states.copy(),
            gamma=self.gamma.copy(),
            mu=None if self.mu is None else self.mu.copy(),
        )

    @classmethod
    def uniform(
        cls,
        n: int,
        gamma: float,
        n_infected: int = 0,
        n_recovered: int = 0,
        mu: float | None = None,
        infected_agents: Sequence[int] | None = None,
    ) -> "AgentPopulation":
        """Homogeneous rates; agents 0..k-1 start infected (or an explicit index list)."""
        if n < 1:
            raise ValueError("population needs at least one agent")
        states = np.full(n, SUSCEPTIBLE, dtype=np.int8)
        if infected_agents is not None:
            if n_infected:
                raise ValueError("give either n_infected or infected_agents, not both")
            idx = np.asarray(list(infected_agents), dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValueError("infected agent index out of range")
            if np.unique(idx).size != idx.size:
                raise ValueError("infected agent indices must be unique")
            states[idx] = INFECTED
            n_infected = idx.size
        else:
            if n_infected < 0 or n_infected + n_recovered > n:
                raise ValueError("initial counts exceed the population")
            states[:n_infected] = INFECTED
        if n_recovered:
            remaining = np.flatnonzero(states == SUSCEPTIBLE)
            if n_recovered > remaining.size:
                raise ValueError("initial counts exceed the population")
            states[remaining[:n_recovered]] = RECOVERED
        return cls(
            states=states,
            gamma=np.full(n, float(gamma)),
            mu=None if mu is None else np.full(n, float(mu)),
        )


def derive_replica_seed(base_seed: int, replica: int) -> int:
    """Seed for one replica of an ensemble.

    Replica streams come from the counter scheme SeedSequence((base_seed, 0,
    replica)) reduced to one 64-bit word, so each replica can be reproduced
    on its own by passing the recorded seed back to simulate_abm.
    """
    sequence = np.random.SeedSequence((base_seed, 0, replica))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def derive_intervention_seed(base_seed: int, index: int) -> int:
    """Seed for the random edge/agent selection of one scheduled intervention."""
    sequence = np.random.SeedSequence((base_seed, 1, index))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


class _StepEngine:
    """Synchronous stepping with incrementally maintained infection hazards.

    With a uniform-rate matrix the hazard is rate * (integer count of infected
    sources), and the counts are updated exactly as agents change state; this
    matches a fresh recount bit for bit. Heterogeneous matrices fall back to
    a fresh row sum whenever the infected set changed. State masks, infection
    probabilities, and uniform draws are cached or batched across steps (the
    consumed random stream is identical to drawing one row per step), which
    keeps small populations fast.
    """

    _BUFFER_TARGET = 4096  # uniforms per refill, shared across batched steps

    def __init__(
        self,
        pop: AgentPopulation,
        t_matrix: TransmissionMatrix,
        rng,
        buffer_steps: int | None = None,
    ):
        if t_matrix.n_agents != pop.n_agents:
            raise ValueError(
                f"transmission matrix is for {t_matrix.n_agents} agents, "
                f"population has {pop.n_agents}"
            )
        self.pop = pop
        self.rng = rng
        if buffer_steps is None:
            buffer_steps = max(1, min(256, self._BUFFER_TARGET // pop.n_agents))
        self._buffer_steps = buffer_steps
        self._buffer_row = self._buffer_steps  # trigger a refill on first use
        self._exit_h = None
        self._death_multiplier = 1.0
        self.counts = list(np.bincount(pop.states, minlength=4))
        self.swap_matrix(t_matrix)

    def swap_matrix(self, t_matrix: TransmissionMatrix) -> None:
        if t_matrix.n_agents != self.pop.n_agents:
            raise ValueError("replacement matrix has the wrong size")
        self.t_matrix = t_matrix
        self._uniform = t_matrix.uniform_rate is not None
        self._refresh_state_caches()

    def notify_state_edit(self) -> None:
        """Recompute caches after an external change to the agent states."""
        self.counts = list(np.bincount(self.pop.states, minlength=4))
        self._refresh_state_caches()

    def _refresh_state_caches(self) -> None:
        self._susceptible = self.pop.states == SUSCEPTIBLE
        self._infected_mask = self.pop.states == INFECTED
        if self._uniform:
            self._neighbor_counts = self.t_matrix.support_counts(
                np.flatnonzero(self._infected_mask)
            )
        self._p_infect = None
        self._p_infect_h = None

    @property
    def any_infected(self) -> bool:
        return self.counts[INFECTED] > 0

    def hazard(self) -> np.ndarray:
        if self._uniform:
            return self.t_matrix.uniform_rate * self._neighbor_counts
        return np.maximum(self.t_matrix.hazard(self._infected_mask), 0.0)

    def set_death_multiplier(self, multiplier: float) -> None:
        """Scale per-agent death rates (overloaded healthcare); 1.0 restores them."""
        if multiplier != self._death_multiplier:
            self._death_multiplier = multiplier
            self._exit_h = None

    def _exit_probability(self, h: float) -> np.ndarray:
        if self._exit_h != h:
            if self.pop.mu is None:
                total = self.pop.gamma
            else:
                mu_effective = self.pop.mu * self._death_multiplier
                total = self.pop.gamma + mu_effective
                with np.errstate(invalid="ignore"):
                    self._death_share = np.where(
                        total > 0, mu_effective / np.where(total > 0, total, 1.0), 0.0
                    )
            self._exit_p = -np.expm1(-total * h)
            self._exit_h = h
        return self._exit_p

    def _next_draws(self) -> np.ndarray:
        if self._buffer_row >= self._buffer_steps:
            self._u_buffer = self.rng.random((self._buffer_steps, self.pop.n_agents))
            if self.pop.mu is not None:
                self._v_buffer = self.rng.random((self._buffer_steps, self.pop.n_agents))
            self._buffer_row = 0
        row = self._buffer_row
        self._buffer_row = row + 1
        return self._u_buffer[row]

    def step(self, h: float) -> None:
        if self._p_infect is None or self._p_infect_h != h:
            self._p_infect = -np.expm1(-self.hazard() * h)
            self._p_infect_h = h
        p_exit = self._exit_probability(h)
        u = self._next_draws()
        newly_infected = self._susceptible & (u < self._p_infect)
        exiting = self._infected_mask & (u < p_exit)
        n_new = int(np.count_nonzero(newly_infected))
        n_exit = int(np.count_nonzero(exiting))
        if n_new == 0 and n_exit == 0:
            return
        n_dead = 0
        states = self.pop.states
        if n_exit:
            states[exiting] = RECOVERED
            if self.pop.mu is not None:
                # the split draw was consumed with the batch either way
                v = self._v_buffer[self._buffer_row - 1]
                dying = exiting & (v < self._death_share)
                n_dead = int(np.count_nonzero(dying))
                if n_dead:
                    states[dying] = DEAD
        if n_new:
            states[newly_infected] = INFECTED
        self.counts[SUSCEPTIBLE] -= n_new
        self.counts[INFECTED] += n_new - n_exit
        self.counts[RECOVERED] += n_exit - n_dead
        self.counts[DEAD] += n_dead
        self._susceptible &= ~newly_infected
        self._infected_mask |= newly_infected
        self._infected_mask &= ~exiting
        if self._uniform:
            if n_new:
                self._neighbor_counts += self.t_matrix.support_counts(
                    np.flatnonzero(newly_infected)
                )
            if n_exit:
                self._neighbor_counts -= self.t_matrix.support_counts(
                    np.flatnonzero(exiting)
                )
        self._p_infect = None


def abm_step(
    pop: AgentPopulation,
    t_matrix: TransmissionMatrix,
    dt: float,
    rng: np.random.Generator,
) -> AgentPopulation:
    """One synchronous update; returns a new population, the input is untouched.

    Consumes exactly one uniform per agent from the supplied generator, in
    agent-index order (plus one per agent for the death split when deaths
    are enabled).
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    result = pop.copy()
    engine = _StepEngine(result, t_matrix, rng, buffer_steps=1)
    engine.step(dt)
    return result


def _columns(pop: AgentPopulation) -> tuple[str, ...]:
    return ("S", "I", "R", "D") if pop.with_deaths else ("S", "I", "R")


def _run_counts(
    pop: AgentPopulation,
    t_matrix: TransmissionMatrix,
    times: np.ndarray,
    rng,
    schedule=None,
    schedule_seed=None,
    capacity_rule=None,
):
    """Step over the grid recording integer counts; stops early once no agent is infected."""
    from .interventions import ScheduleRunState  # local import to avoid a cycle

    if capacity_rule is not None and not pop.with_deaths:
        raise ValueError("a healthcare-capacity rule needs a population with death rates")
    n_cols = 4 if pop.with_deaths else 3
    counts = np.empty((times.size, n_cols), dtype=np.int64)
    engine = _StepEngine(pop, t_matrix, rng)
    run_state = ScheduleRunState(schedule, base_seed=schedule_seed) if schedule is not None else None
    steps = np.diff(times)
    capacity = (
        None if capacity_rule is None
        else capacity_rule.infected_threshold_fraction * pop.n_agents
    )
    for idx in range(times.size):
        if run_state is not None:
            run_state.process_boundary_abm(times[idx], engine)
        counts[idx] = engine.counts[:n_cols]
        if idx == times.size - 1:
            break
        if not engine.any_infected and (run_state is None or run_state.exhausted):
            # absorbing: zero hazard leaves every agent in place regardless of draws
            counts[idx + 1 :] = counts[idx]
            break
        if capacity is not None:
            overloaded = engine.counts[INFECTED] > capacity
            engine.set_death_multiplier(
                capacity_rule.death_rate_multiplier if overloaded else 1.0
            )
        engine.step(steps[idx])
    return counts, pop, run_state


def simulate_abm(
    pop0: AgentPopulation,
    t_matrix: TransmissionMatrix,
    dt: float,
    t_end: float,
    seed: int,
) -> Trajectory:
    """Synchronous stochastic run; identical (inputs, seed) give bit-identical output."""
    from .core import time_grid

    times = time_grid(t_end, dt)
    pop = pop0.copy()
    rng = np.random.default_rng(seed)
    counts, final_pop, _ = _run_counts(pop, t_matrix, times, rng)
    meta = {
        "model": "abm",
        "seed": seed,
        "dt": dt,
        "n_agents": pop0.n_agents,
        "final_states": final_pop.states.copy(),
    }
    return Trajectory(times, counts, columns=_columns(pop0), meta=meta)


@dataclass
class EnsembleResult:
    """Replica-level outcomes plus the arithmetic-mean trajectory."""

    mean_trajectory: Trajectory
    replica_final_sizes: np.ndarray
    seeds: np.ndarray
    n_agents: int
    base_seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.replica_final_sizes = np.asarray(self.replica_final_sizes, dtype=np.int64)
        self.seeds = np.asarray(self.seeds, dtype=np.uint64)
        if self.replica_final_sizes.size < 1:
            raise ValueError("ensemble needs at least one replica")
        if self.replica_final_sizes.min() < 0 or self.replica_final_sizes.max() > self.n_agents:
            raise ValueError("final sizes must lie in [0, N]")

    @property
    def n_replicas(self) -> int:
        return self.replica_final_sizes.size


_WORKER_PAYLOAD = None


def _init_worker(payload) -> None:
    global _WORKER_PAYLOAD
    _WORKER_PAYLOAD = payload


def _replica_block(args):
    start, stop = args
    pop0, t_matrix, times, base_seed, schedule, capacity_rule = _WORKER_PAYLOAD
    return _compute_block(pop0, t_matrix, times, base_seed, schedule, capacity_rule, start, stop)


def _compute_block(pop0, t_matrix, times, base_seed, schedule, capacity_rule, start, stop):
    n_cols = 4 if pop0.with_deaths else 3
    block_sum = np.zeros((times.size, n_cols), dtype=np.int64)
    finals = np.empty(stop - start, dtype=np.int64)
    seeds = np.empty(stop - start, dtype=np.uint64)
    logs = {}
    for r in range(start, stop):
        seed_r = derive_replica_seed(base_seed, r)
        rng = np.random.default_rng(seed_r)
        counts, _, run_state = _run_counts(
            pop0.copy(), t_matrix, times, rng, schedule=schedule, schedule_seed=seed_r,
            capacity_rule=capacity_rule,
        )
        block_sum += counts
        finals[r - start] = counts[-1, 2:].sum()  # R (+ D) at the end
        seeds[r - start] = seed_r
        if run_state is not None and run_state.log:
            logs[r] = run_state.log
    return start, block_sum, finals, seeds, logs


def monte_carlo(
    pop0: AgentPopulation,
    t_matrix: TransmissionMatrix,
    dt: float,
    t_end: float,
    n_replicas: int,
    base_seed: int,
    *,
    workers: int = 1,
    schedule=None,
    capacity_rule=None,
) -> EnsembleResult:
    """Independent replicas with per-replica derived seeds.

    Count sums are accumulated as integers into per-block slots, so the mean
    trajectory is bit-identical no matter how many workers run the blocks or
    in which order they finish.
    """
    from .core import time_grid

    if n_replicas < 1:
        raise ValueError("need at least one replica")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if t_matrix.n_agents != pop0.n_agents:
        raise ValueError("transmission matrix size does not match the population")
    times = time_grid(t_end, dt)
    n_cols = 4 if pop0.with_deaths else 3
    total = np.zeros((times.size, n_cols), dtype=np.int64)
    finals = np.empty(n_replicas, dtype=np.int64)
    seeds = np.empty(n_replicas, dtype=np.uint64)
    logs: dict[int, list] = {}

    block = max(1, -(-n_replicas // max(workers, 1) // 4))
    blocks = [(start, min(start + block, n_replicas)) for start in range(0, n_replicas, block)]
    if workers == 1:
        results = [
            _compute_block(pop0, t_matrix, times, base_seed, schedule, capacity_rule, start, stop)
            for start, stop in blocks
        ]
    else:
        payload = (pop0, t_matrix, times, base_seed, schedule, capacity_rule)
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(payload,)) as pool:
            results = list(pool.map(_replica_block, blocks))
    for start, block_sum, block_finals, block_seeds, block_logs in results:
        total += block_sum
        finals[start : start + block_finals.size] = block_finals
        seeds[start : start + block_seeds.size] = block_seeds
        logs.update(block_logs)

    mean_states = total / n_replicas
    mean_traj = Trajectory(
        times,
        mean_states,
        columns=_columns(pop0),
        meta={
            "model": "abm-ensemble",
            "n_replicas": n_replicas,
            "base_seed": base_seed,
            "dt": dt,
            "n_agents": pop0.n_agents,
        },
    )
    return EnsembleResult(
        mean_trajectory=mean_traj,
        replica_final_sizes=finals,
        seeds=seeds,
        n_agents=pop0.n_agents,
        base_seed=base_seed,
        meta={"dt": dt, "t_end": t_end, "intervention_logs": logs},
    )


@dataclass
class OutbreakStats:
    """Sample statistics of the replica final-size distribution."""

    mean: float
    median: float
    max_size: int
    skewness: float
    sizes: np.ndarray  # distinct final sizes
    counts: np.ndarray  # replica counts per distinct size
    major_threshold: float
    major_fraction: float


def outbreak_size_distribution(
    ens: EnsembleResult, major_threshold: float | None = None
) -> OutbreakStats:
    """Histogram, moments, and major-outbreak fraction of the final sizes.

    The major-outbreak threshold separates early extinctions from macroscopic
    outbreaks; it defaults to 10% of the population. Skewness needs at least
    two replicas.
    """
    finals = ens.replica_final_sizes
    if finals.size < 2:
        raise ValueError("skewness needs at least two replicas")
    if major_threshold is None:
        major_threshold = 0.1 * ens.n_agents
    centered = finals - finals.mean()
    m2 = float(np.mean(centered**2))
    m3 = float(np.mean(centered**3))
    skewness = 0.0 if m2 == 0 else m3 / m2**1.5
    sizes, counts = np.unique(finals, return_counts=True)
    return OutbreakStats(
        mean=float(finals.mean()),
        median=float(np.median(finals)),
        max_size=int(finals.max()),
        skewness=skewness,
        sizes=sizes,
        counts=counts,
        major_threshold=float(major_threshold),
        major_fraction=float(np.mean(finals > major_threshold)),
    )


def write_replicas_csv(ens: EnsembleResult, path) -> None:
    """One row per replica: index, derived seed, final outbreak size."""
    lines = ["replica,seed,final_size"]
    for r in range(ens.n_replicas):
        lines.append(f"{r},{int(ens.seeds[r])},{int(ens.replica_final_sizes[r])}")
    atomic_write_text(path, "\n".join(lines) + "\n")
