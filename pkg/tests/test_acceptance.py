"""Acceptance suite: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptance.py -v` (add -s to see the pass lines
live). The heavier criteria use two worker processes; every run is seeded and
deterministic.
"""

import math
import time
from pathlib import Path

import numpy as np
from scipy.stats import chisquare

from episim.abm import AgentPopulation, monte_carlo, outbreak_size_distribution, simulate_abm
from episim.abm import INFECTED, SUSCEPTIBLE, derive_replica_seed
from episim.cli import run_scenario
from episim.compartmental import CompartmentalKind, doubling_time, simulate_compartmental
from episim.core import CompartmentState, EpidemicParams, trajectory_stats
from episim.econ import IOTable, leontief_output
from episim.interventions import apply_compartmentalization, apply_vaccination, contiguous_partition
from episim.meanfield import (
    aggregate_equivalent_params,
    aggregate_trajectory,
    integrate_meanfield,
    uniform_probability_state,
)
from episim.network import complete_network, erdos_renyi, transmission_from_network

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
WORKERS = 2


def _report(number: int, name: str, detail: str) -> None:
    print(f"[acceptance {number:02d}] {name}: PASS ({detail})")


def test_c01_reduction_theorem_meanfield_equals_compartmental():
    start = time.perf_counter()
    n, beta, gamma = 1000, 3e-4, 0.1
    t_matrix = transmission_from_network(complete_network(n), beta)
    initial = CompartmentState(s=n - 10, i=10, r=0)
    p0 = uniform_probability_state(initial, n)
    meanfield = aggregate_trajectory(
        integrate_meanfield(p0, t_matrix, np.full(n, gamma), dt=0.1, t_end=200.0)
    )
    compartmental = simulate_compartmental(
        CompartmentalKind.SIR, EpidemicParams(beta=beta, gamma=gamma), initial, 200.0, 0.1
    )
    deviation = float(np.max(np.abs(meanfield.states - compartmental.states)))
    elapsed = time.perf_counter() - start
    assert deviation <= 1e-8
    assert elapsed < 10.0
    _report(1, "reduction theorem", f"max |S,I,R| deviation {deviation:.3e}, {elapsed:.1f}s")


def test_c02_equivalent_parameters_exact_for_random_triples():
    rng = np.random.default_rng(2718)
    for _ in range(10):
        beta = float(rng.uniform(1e-4, 2.0))
        gamma = float(rng.uniform(1e-3, 2.0))
        n = int(rng.integers(2, 500))
        t_matrix = transmission_from_network(complete_network(n), beta)
        result = aggregate_equivalent_params(t_matrix, np.full(n, gamma), n)
        assert result == (beta, gamma, beta / gamma)
    _report(2, "equivalent-parameter consistency", "10 random triples, exact equality")


def _ensemble_peak_discrepancy(n: int, replicas: int) -> float:
    gamma, r0_target = 0.1, 3.0
    beta = r0_target * gamma / n
    seeds = max(2, round(0.02 * n))
    t_matrix = transmission_from_network(complete_network(n), beta)
    pop = AgentPopulation.uniform(n, gamma, n_infected=seeds)
    ensemble = monte_carlo(pop, t_matrix, 0.1, 100.0, replicas, base_seed=808, workers=WORKERS)
    ode = simulate_compartmental(
        CompartmentalKind.SIR,
        EpidemicParams(beta=beta, gamma=gamma),
        CompartmentState(s=n - seeds, i=seeds, r=0),
        100.0,
        0.1,
    )
    ode_peak = trajectory_stats(ode).peak_infected
    mean_peak = float(ensemble.mean_trajectory.column("I").max())
    return abs(mean_peak - ode_peak) / ode_peak


def test_c03_abm_converges_to_ode_with_population_size():
    start = time.perf_counter()
    discrepancy_small = _ensemble_peak_discrepancy(100, 500)
    discrepancy_large = _ensemble_peak_discrepancy(1000, 500)
    elapsed = time.perf_counter() - start
    assert discrepancy_large < 0.05
    assert discrepancy_large < discrepancy_small
    assert elapsed < 300.0
    _report(
        3,
        "ABM-to-ODE convergence",
        f"peak discrepancy {discrepancy_small:.3f} (N=100) -> "
        f"{discrepancy_large:.3f} (N=1000), {elapsed:.0f}s",
    )


def _three_agent_final_size_distribution(beta, gamma, dt):
    """Exhaustive absorption distribution of the synchronous 3-agent chain."""
    from scipy.stats import binom

    p_recover = -math.expm1(-gamma * dt)

    def p_infect(infected):
        return -math.expm1(-infected * beta * dt)

    distribution = {(2, 1): 1.0}  # (susceptible, infected), one seed
    absorbed = np.zeros(4)  # final size 3 - s
    while sum(distribution.values()) > 1e-15:
        advanced = {}
        for (s, i), mass in distribution.items():
            p_inf = p_infect(i)
            for new_inf in range(s + 1):
                p_new = binom.pmf(new_inf, s, p_inf)
                for exits in range(i + 1):
                    probability = mass * p_new * binom.pmf(exits, i, p_recover)
                    if probability == 0.0:
                        continue
                    nxt = (s - new_inf, i + new_inf - exits)
                    if nxt[1] == 0:
                        absorbed[3 - nxt[0]] += probability
                    else:
                        advanced[nxt] = advanced.get(nxt, 0.0) + probability
        distribution = advanced
    return absorbed


def test_c04_three_agent_abm_matches_markov_enumeration():
    start = time.perf_counter()
    beta, gamma, dt = 0.3, 0.1, 0.5
    replicas = 100_000
    expected = _three_agent_final_size_distribution(beta, gamma, dt)
    assert abs(expected.sum() - 1.0) < 1e-12

    t_matrix = transmission_from_network(complete_network(3), beta)
    pop = AgentPopulation.uniform(3, gamma, n_infected=1)
    ensemble = monte_carlo(pop, t_matrix, dt, 500.0, replicas, base_seed=4242, workers=WORKERS)
    observed = np.bincount(ensemble.replica_final_sizes, minlength=4)

    sizes = [1, 2, 3]  # size 0 is impossible with one seed
    assert observed[0] == 0
    result = chisquare(observed[sizes], expected[sizes] * replicas)
    elapsed = time.perf_counter() - start
    assert result.pvalue > 0.01
    assert elapsed < 60.0
    _report(
        4,
        "exact small-instance oracle",
        f"chi-square p = {result.pvalue:.3f} over {replicas} replicas, {elapsed:.0f}s",
    )


def test_c05_threshold_behavior_is_exact():
    subcritical = simulate_compartmental(
        CompartmentalKind.SIR,
        EpidemicParams(beta=5e-5, gamma=0.1),  # beta*N/gamma = 0.5
        CompartmentState(s=990, i=10, r=0),
        150.0,
        0.1,
    )
    assert np.all(np.diff(subcritical.column("I")) <= 0)

    supercritical = simulate_compartmental(
        CompartmentalKind.SIR,
        EpidemicParams(beta=3e-4, gamma=0.1),  # beta*N/gamma = 3
        CompartmentState(s=999, i=1, r=0),
        150.0,
        0.1,
    )
    assert np.all(np.diff(supercritical.column("I")[:11]) > 0)
    _report(5, "threshold behavior", "R0=0.5 never grows; R0=3 grows for 10 steps")


def test_c06_doubling_time_two_days():
    n, gamma, growth = 1000.0, 0.1, 0.3465
    beta = (growth + gamma) / n
    traj = simulate_compartmental(
        CompartmentalKind.SIR,
        EpidemicParams(beta=beta, gamma=gamma),
        CompartmentState(s=n - 1, i=1, r=0),
        20.0,
        0.1,
    )
    measured = doubling_time(traj, (0.0, 10.0))
    assert abs(measured - 2.0) / 2.0 < 0.05
    _report(6, "doubling time", f"measured {measured:.3f} days vs 2.0")


def test_c07_conservation_fuzz_across_model_kinds():
    rng = np.random.default_rng(31337)
    kinds = ("sir", "sird", "sirs", "abm", "abm_sird", "meanfield")
    checked = 0
    for index in range(100):
        kind = kinds[index % len(kinds)]
        n = int(rng.integers(20, 150))
        gamma = float(rng.uniform(0.05, 0.5))
        beta = float(rng.uniform(0.3, 4.0)) * gamma / n
        dt = float(rng.uniform(0.05, 0.5))
        t_end = float(rng.uniform(10.0, 60.0))
        seeds = int(rng.integers(1, max(2, n // 4)))
        if kind in ("sir", "sird", "sirs"):
            params = EpidemicParams(
                beta=beta,
                gamma=gamma,
                mu=float(rng.uniform(0.0, 0.1)) if kind == "sird" else None,
                xi=float(rng.uniform(0.0, 0.1)) if kind == "sirs" else None,
            )
            traj = simulate_compartmental(
                CompartmentalKind(kind), params,
                CompartmentState(s=n - seeds, i=seeds, r=0), t_end, dt,
            )
        elif kind.startswith("abm"):
            net = (
                complete_network(n)
                if index % 2 == 0
                else erdos_renyi(n, float(rng.uniform(0.1, 0.4)), seed=index)
            )
            t_matrix = transmission_from_network(net, beta)
            mu = float(rng.uniform(0.0, 0.2)) if kind == "abm_sird" else None
            pop = AgentPopulation.uniform(n, gamma, n_infected=seeds, mu=mu)
            traj = simulate_abm(pop, t_matrix, dt, t_end, seed=int(rng.integers(2**31)))
        else:
            net = complete_network(n)
            t_matrix = transmission_from_network(net, beta)
            p0 = uniform_probability_state(CompartmentState(s=n - seeds, i=seeds, r=0), n)
            traj = aggregate_trajectory(
                integrate_meanfield(p0, t_matrix, np.full(n, gamma), dt, t_end)
            )
        totals = traj.states.sum(axis=1)
        assert np.max(np.abs(totals - n)) <= 1e-8 * n, f"scenario {index} ({kind})"
        checked += 1
    assert checked == 100
    _report(7, "conservation", "100 fuzzed scenarios within 1e-8 * N")


def _herd_immunity_mean_unvaccinated_final(coverage: float, replicas: int) -> float:
    n, gamma, beta = 1000, 0.1, 3e-4  # R0 = 3
    everyone_susceptible = AgentPopulation.uniform(n, gamma)
    vaccinated = apply_vaccination(everyone_susceptible, coverage, seed=515)
    n_vaccinated = int(np.count_nonzero(vaccinated.states == 2))
    states = vaccinated.states.copy()
    first_susceptible = np.flatnonzero(states == SUSCEPTIBLE)[0]
    states[first_susceptible] = INFECTED
    pop = AgentPopulation(states=states, gamma=vaccinated.gamma)
    t_matrix = transmission_from_network(complete_network(n), beta)
    ensemble = monte_carlo(pop, t_matrix, 0.25, 250.0, replicas, base_seed=99, workers=WORKERS)
    return float(ensemble.replica_final_sizes.mean()) - n_vaccinated


def test_c08_herd_immunity_threshold():
    start = time.perf_counter()
    protected = _herd_immunity_mean_unvaccinated_final(0.70, 200)
    unprotected = _herd_immunity_mean_unvaccinated_final(0.0, 200)
    elapsed = time.perf_counter() - start
    assert protected < 0.05 * 1000
    assert unprotected > 0.50 * 1000
    assert elapsed < 300.0
    _report(
        8,
        "herd-immunity threshold",
        f"mean unvaccinated final size {protected:.1f} at 70% coverage "
        f"vs {unprotected:.0f} at 0%, {elapsed:.0f}s",
    )


def test_c09_supercritical_outbreaks_are_bimodal():
    n, gamma, beta = 1000, 0.1, 3e-4  # R0 = 3, extinction probability about 1/3
    t_matrix = transmission_from_network(complete_network(n), beta)
    pop = AgentPopulation.uniform(n, gamma, n_infected=1)
    ensemble = monte_carlo(pop, t_matrix, 0.25, 250.0, 2000, base_seed=777, workers=WORKERS)
    stats = outbreak_size_distribution(ensemble)
    extinction_fraction = 1.0 - stats.major_fraction
    assert abs(extinction_fraction - 1.0 / 3.0) <= 0.05
    finals = ensemble.replica_final_sizes
    middle_band = np.mean((finals > 0.1 * n) & (finals < 0.5 * n))
    assert middle_band < 0.02  # two separated masses, nearly nothing between
    assert stats.skewness < 0  # major-outbreak mass dominates, extinction tail below
    _report(
        9,
        "outbreak-size asymmetry",
        f"extinction fraction {extinction_fraction:.3f} vs 1/3, "
        f"middle band {middle_band:.3%}",
    )


def test_c10_full_compartmentalization_confines_outbreaks():
    n = 200
    t_matrix = transmission_from_network(complete_network(n), 3e-3)
    labels = contiguous_partition([100, 100], n)
    cut = apply_compartmentalization(t_matrix, labels, 1.0, seed=5)
    pop = AgentPopulation.uniform(n, 0.1, n_infected=1)  # seed in the first community
    escapes = 0
    for replica in range(1000):
        traj = simulate_abm(pop, cut, 0.5, 150.0, seed=derive_replica_seed(4747, replica))
        final_states = traj.meta["final_states"]
        escapes += int(np.any(final_states[100:] != SUSCEPTIBLE))
    assert escapes == 0
    _report(10, "compartmentalization confinement", "0 escapes in 1000 replicas")


def test_c11_leontief_correctness():
    rng = np.random.default_rng(1234)
    for _ in range(100):
        n = int(rng.integers(1, 21))
        raw = rng.random((n, n))
        radius = float(np.max(np.abs(np.linalg.eigvals(raw))))
        coefficients = raw * (rng.uniform(0.05, 0.95) / max(radius, 1e-12))
        demand = rng.random(n) * 50.0
        table = IOTable(
            tuple(f"s{k}" for k in range(n)), coefficients, demand, np.full(n, 0.5)
        )
        x = leontief_output(table, demand)
        residual = np.linalg.norm(x - coefficients @ x - demand)
        assert residual <= 1e-9 * np.linalg.norm(demand)

    table = IOTable(("a", "b"), [[0.1, 0.2], [0.3, 0.1]], [10.0, 20.0], [0.5, 0.5])
    x = leontief_output(table, np.array([10.0, 20.0]))
    assert abs(x[0] - 52.0 / 3.0) <= 1e-9
    assert abs(x[1] - 28.0) <= 1e-9
    _report(11, "Leontief correctness", "100 random tables + hand-solved 2x2")


def test_c12_byte_identical_outputs_regardless_of_parallelism(tmp_path, monkeypatch):
    monkeypatch.setenv("EPISIM_OUTPUT_DIR", str(tmp_path))
    run_scenario(SCENARIOS / "determinism_workers1.toml")
    first = (tmp_path / "determinism_w1.csv").read_bytes()
    first_replicas = (tmp_path / "determinism_w1_replicas.csv").read_bytes()

    run_scenario(SCENARIOS / "determinism_workers1.toml")  # same scenario twice
    assert (tmp_path / "determinism_w1.csv").read_bytes() == first
    assert (tmp_path / "determinism_w1_replicas.csv").read_bytes() == first_replicas

    run_scenario(SCENARIOS / "determinism_workers2.toml")  # parallel replicas
    assert (tmp_path / "determinism_w2.csv").read_bytes() == first
    assert (tmp_path / "determinism_w2_replicas.csv").read_bytes() == first_replicas
    _report(12, "determinism", "rerun and workers=2 byte-identical CSVs")


def test_c13_lockdown_release_gives_multiple_waves_and_nonmonotone_economy(
    tmp_path, monkeypatch
):
    monkeypatch.setenv("EPISIM_OUTPUT_DIR", str(tmp_path))
    from episim.core import read_trajectory_csv

    run_scenario(SCENARIOS / "lockdown_waves.toml")
    waves = read_trajectory_csv(tmp_path / "lockdown_waves.csv")
    infected = waves.column("I")
    maxima_times = [
        waves.times[k]
        for k in range(1, infected.size - 1)
        if infected[k] > infected[k - 1] and infected[k] > infected[k + 1]
    ]
    assert len(maxima_times) >= 2
    assert max(np.diff(maxima_times)) >= 10.0

    run_scenario(SCENARIOS / "coupled_lockdown.toml")
    coupled = read_trajectory_csv(tmp_path / "coupled_lockdown.csv")
    index = coupled.column("output_index")
    trough = float(index.min())
    assert trough < index[0] - 0.05  # dips during lockdown
    assert index[-1] > trough + 0.05  # recovers afterwards: no monotone decline
    assert float(index.max()) <= 1.0 + 1e-12
    _report(
        13,
        "multi-wave and no V-shape",
        f"{len(maxima_times)} infection peaks; output index trough {trough:.2f}",
    )
