import numpy as np
import pytest

from episim.abm import (
    RECOVERED,
    SUSCEPTIBLE,
    AgentPopulation,
    monte_carlo,
    simulate_abm,
)
from episim.core import CompartmentState
from episim.interventions import (
    HealthcareCapacity,
    Intervention,
    InterventionSchedule,
    ScheduleRunState,
    apply_compartmentalization,
    apply_density_reduction,
    apply_transmission_scale,
    apply_vaccination,
    contiguous_partition,
    run_scheduled,
)
from episim.meanfield import (
    aggregate_trajectory,
    integrate_meanfield,
    uniform_probability_state,
)
from episim.network import complete_network, erdos_renyi, transmission_from_network


def test_density_reduction_extremes():
    t = transmission_from_network(erdos_renyi(100, 0.1, seed=1), 0.05)
    unchanged = apply_density_reduction(t, 0.0, seed=2)
    assert np.array_equal(unchanged.toarray(), t.toarray())
    emptied = apply_density_reduction(t, 1.0, seed=2)
    assert np.all(emptied.toarray() == 0)


def test_density_reduction_keeps_diagonal():
    t = transmission_from_network(complete_network(6), 0.3)
    emptied = apply_density_reduction(t, 1.0, seed=5)
    dense = emptied.toarray()
    assert np.all(np.diag(dense) == 0.3)
    off = dense[~np.eye(6, dtype=bool)]
    assert np.all(off == 0)


def test_density_reduction_halves_average_degree():
    t = transmission_from_network(erdos_renyi(1000, 0.01, seed=3), 0.02)
    pairs_before = t.nnz // 2
    reduced = apply_density_reduction(t, 0.5, seed=4)
    removed = pairs_before - reduced.nnz // 2
    assert removed == round(0.5 * pairs_before)


def test_density_reduction_deterministic_per_seed():
    t = transmission_from_network(erdos_renyi(200, 0.05, seed=1), 0.05)
    a = apply_density_reduction(t, 0.3, seed=11)
    b = apply_density_reduction(t, 0.3, seed=11)
    c = apply_density_reduction(t, 0.3, seed=12)
    assert np.array_equal(a.toarray(), b.toarray())
    assert not np.array_equal(a.toarray(), c.toarray())


def test_compartmentalization_single_community_is_identity():
    t = transmission_from_network(complete_network(20), 0.1)
    labels = np.zeros(20, dtype=np.int64)
    cut = apply_compartmentalization(t, labels, 1.0, seed=1)
    assert np.array_equal(cut.toarray(), t.toarray())


def test_compartmentalization_full_cut_is_block_diagonal():
    t = transmission_from_network(complete_network(10), 1.0)
    labels = contiguous_partition([5, 5], 10)
    cut = apply_compartmentalization(t, labels, 1.0, seed=7)
    dense = cut.toarray()
    assert np.all(dense[:5, 5:] == 0)
    assert np.all(dense[5:, :5] == 0)
    assert np.all(dense[:5, :5] == 1.0)
    # edge-counting oracle: 2 blocks of 5x5 ones = 50 entries over 10 agents
    assert cut.nnz / 10 == 5.0


def test_compartmentalization_validates_partition():
    t = transmission_from_network(complete_network(10), 1.0)
    with pytest.raises(ValueError, match="one community per agent"):
        apply_compartmentalization(t, np.zeros(7, dtype=np.int64), 1.0, seed=1)
    with pytest.raises(ValueError, match="sum to"):
        contiguous_partition([4, 4], 10)


def test_vaccination_extremes_and_counts():
    pop = AgentPopulation.uniform(100, 0.1, n_infected=10)
    same = apply_vaccination(pop, 0.0, seed=1)
    assert np.array_equal(same.states, pop.states)
    everyone = apply_vaccination(pop, 1.0, seed=1)
    assert np.count_nonzero(everyone.states == SUSCEPTIBLE) == 0
    assert np.count_nonzero(everyone.states == RECOVERED) == 90
    partial = apply_vaccination(pop, 0.3, seed=1)
    assert np.count_nonzero(partial.states == RECOVERED) == 27


def test_vaccination_probability_mass_move():
    state = uniform_probability_state(CompartmentState(s=8, i=2, r=0), 10)
    vaccinated = apply_vaccination(state, 0.25)
    assert np.allclose(vaccinated.p_s, 0.6)
    assert np.allclose(vaccinated.p_r, 0.2)
    assert np.allclose(vaccinated.p_i, state.p_i)


def test_transmission_scale():
    t = transmission_from_network(complete_network(4), 0.2)
    doubled = apply_transmission_scale(t, 2.0)
    assert np.all(doubled.toarray() == 0.4)
    with pytest.raises(ValueError):
        apply_transmission_scale(t, -1.0)


def test_intervention_validation():
    with pytest.raises(ValueError, match="exactly one"):
        Intervention(kind="vaccinate", fraction=0.5)
    with pytest.raises(ValueError, match="exactly one"):
        Intervention(kind="vaccinate", fraction=0.5, at=1.0, trigger_infected_fraction=0.1)
    with pytest.raises(ValueError, match="irreversible"):
        Intervention(kind="vaccinate", fraction=0.5, at=1.0, duration=5.0)
    with pytest.raises(ValueError, match="after activation"):
        Intervention(kind="transmission_scale", factor=0.5, at=5.0, until=2.0)
    with pytest.raises(ValueError, match="duration"):
        Intervention(kind="transmission_scale", factor=0.5,
                     trigger_infected_fraction=0.1, until=9.0)
    with pytest.raises(ValueError, match="fraction"):
        Intervention(kind="density_reduction", at=0.0, fraction=1.5)


def test_schedule_rejects_overlapping_irreversibles():
    entries = [
        Intervention(kind="vaccinate", fraction=0.2, at=5.0),
        Intervention(kind="vaccinate", fraction=0.3, at=5.0),
    ]
    with pytest.raises(ValueError, match="share an activation time"):
        InterventionSchedule(entries=entries)


def test_reversal_restores_matrix_bit_exactly():
    base = transmission_from_network(erdos_renyi(80, 0.2, seed=2), 0.07)
    schedule = InterventionSchedule(entries=[
        Intervention(kind="density_reduction", fraction=0.4, at=0.0, until=10.0, seed=3),
        Intervention(kind="transmission_scale", factor=0.5, at=0.0, until=10.0),
    ])
    state = ScheduleRunState(schedule, base_seed=1)
    modified = state.process_boundary(0.0, 0.0, base, vaccinate=lambda e, s: None)
    assert modified is not None
    assert not np.array_equal(modified.toarray(), base.toarray())
    restored = state.process_boundary(10.0, 0.0, modified, vaccinate=lambda e, s: None)
    assert restored is not None
    assert np.array_equal(restored.toarray(), base.toarray())


def test_empty_schedule_matches_unscheduled_bit_for_bit():
    n = 80
    t = transmission_from_network(complete_network(n), 2e-3)
    pop = AgentPopulation.uniform(n, 0.1, n_infected=2)
    empty = InterventionSchedule(entries=[])
    scheduled = run_scheduled("abm", pop, t, empty, 0.5, 40.0, seed=21)
    plain = simulate_abm(pop, t, 0.5, 40.0, seed=21)
    assert np.array_equal(scheduled.states, plain.states)

    p0 = uniform_probability_state(CompartmentState(s=n - 2, i=2, r=0), n)
    gamma = np.full(n, 0.1)
    scheduled_mf = run_scheduled("meanfield", p0, t, empty, 0.1, 40.0, seed=1, gamma_vec=gamma)
    plain_mf = aggregate_trajectory(integrate_meanfield(p0, t, gamma, 0.1, 40.0))
    assert np.array_equal(scheduled_mf.states, plain_mf.states)


def test_zero_transmission_scale_stops_all_infections():
    n = 60
    t = transmission_from_network(complete_network(n), 5e-3)
    pop = AgentPopulation.uniform(n, 0.2, n_infected=3)
    schedule = InterventionSchedule(entries=[
        Intervention(kind="transmission_scale", factor=0.0, at=0.0)
    ])
    traj = run_scheduled("abm", pop, t, schedule, 0.5, 60.0, seed=9)
    assert traj.column("R")[-1] == 3  # only the seeds, recovered
    assert traj.column("S")[-1] == n - 3


def test_lockdown_trigger_produces_second_wave_in_meanfield():
    n = 400
    t = transmission_from_network(complete_network(n), 3e-4 * 1000 / n)
    p0 = uniform_probability_state(CompartmentState(s=n - 4, i=4, r=0), n)
    schedule = InterventionSchedule(entries=[
        Intervention(kind="density_reduction", fraction=0.6,
                     trigger_infected_fraction=0.05, duration=30.0, seed=5)
    ])
    traj = run_scheduled("meanfield", p0, t, schedule, 0.1, 250.0, seed=2,
                         gamma_vec=np.full(n, 0.1))
    infected = traj.column("I")
    maxima = [
        k for k in range(1, len(infected) - 1)
        if infected[k] > infected[k - 1] and infected[k] > infected[k + 1]
    ]
    assert len(maxima) >= 2
    log = traj.meta["intervention_log"]
    assert [event["action"] for event in log] == ["applied", "reverted"]


def test_vaccination_in_schedule_moves_counts():
    n = 100
    t = transmission_from_network(complete_network(n), 0.0)
    pop = AgentPopulation.uniform(n, 0.0, n_infected=0)
    schedule = InterventionSchedule(entries=[
        Intervention(kind="vaccinate", fraction=0.5, at=10.0, seed=4)
    ])
    traj = run_scheduled("abm", pop, t, schedule, 1.0, 20.0, seed=1)
    recovered = traj.column("R")
    assert recovered[0] == 0
    assert recovered[-1] == 50
    assert traj.meta["intervention_log"][0]["time"] == 10.0


def test_confinement_with_full_cut():
    n = 100
    t = transmission_from_network(complete_network(n), 5e-3)
    labels = contiguous_partition([50, 50], n)
    cut = apply_compartmentalization(t, labels, 1.0, seed=1)
    pop = AgentPopulation.uniform(n, 0.1, n_infected=1)  # seed in community 0
    for seed in range(20):
        traj = simulate_abm(pop, cut, 0.5, 80.0, seed=seed)
        final_states = traj.meta["final_states"]
        assert np.all(final_states[50:] == SUSCEPTIBLE)


def test_healthcare_capacity_rule_validation():
    with pytest.raises(ValueError, match="multiplier"):
        HealthcareCapacity(infected_threshold_fraction=0.1, death_rate_multiplier=0.5)
    with pytest.raises(ValueError, match="threshold"):
        HealthcareCapacity(infected_threshold_fraction=-0.1, death_rate_multiplier=2.0)


def test_healthcare_capacity_needs_deaths():
    n = 40
    t = transmission_from_network(complete_network(n), 1e-3)
    pop = AgentPopulation.uniform(n, 0.1, n_infected=2)  # no mu
    rule = HealthcareCapacity(infected_threshold_fraction=0.1, death_rate_multiplier=2.0)
    with pytest.raises(ValueError, match="death rates"):
        run_scheduled("abm", pop, t, InterventionSchedule(), 0.5, 10.0, seed=1,
                      capacity_rule=rule)


def test_healthcare_capacity_inactive_above_everything_is_identity():
    n = 100
    t = transmission_from_network(complete_network(n), 3e-3)
    pop = AgentPopulation.uniform(n, 0.1, n_infected=4, mu=0.05)
    never = HealthcareCapacity(infected_threshold_fraction=2.0, death_rate_multiplier=10.0)
    with_rule = run_scheduled("abm", pop, t, InterventionSchedule(), 0.5, 80.0, seed=6,
                              capacity_rule=never)
    without = run_scheduled("abm", pop, t, InterventionSchedule(), 0.5, 80.0, seed=6)
    assert np.array_equal(with_rule.states, without.states)


def test_overloaded_healthcare_raises_death_share_of_exits():
    # pure exit process (no transmission): the multiplier moves the death
    # share among exits from mu/(gamma+mu) = 0.5 to 5mu/(gamma+5mu) = 5/6
    n = 4000
    t = transmission_from_network(complete_network(n), 0.0)
    pop = AgentPopulation.uniform(n, 0.1, n_infected=n, mu=0.1)
    overload = HealthcareCapacity(infected_threshold_fraction=0.0, death_rate_multiplier=5.0)
    strained = run_scheduled("abm", pop, t, InterventionSchedule(), 0.5, 120.0, seed=19,
                             capacity_rule=overload)
    baseline = run_scheduled("abm", pop, t, InterventionSchedule(), 0.5, 120.0, seed=19)
    share_strained = strained.column("D")[-1] / n
    share_baseline = baseline.column("D")[-1] / n
    sigma = np.sqrt(0.25 / n)
    assert abs(share_baseline - 0.5) < 4 * sigma
    assert abs(share_strained - 5.0 / 6.0) < 4 * np.sqrt(5 / 36 / n)
    # exits are also faster while overloaded
    assert strained.column("I")[20] < baseline.column("I")[20]


def test_stronger_density_reduction_does_not_increase_final_size():
    n, replicas = 200, 100
    base = transmission_from_network(complete_network(n), 1.5e-3)
    pop = AgentPopulation.uniform(n, 0.1, n_infected=4)
    means = []
    for fraction in (0.3, 0.7):
        schedule = InterventionSchedule(entries=[
            Intervention(kind="density_reduction", fraction=fraction, at=0.0, seed=31)
        ])
        ens = monte_carlo(pop, base, 0.5, 120.0, replicas, base_seed=15, schedule=schedule)
        means.append(ens.replica_final_sizes.mean())
    assert means[1] <= means[0]
