"""Epidemic dynamics toolkit.

Three mutually consistent model layers over one set of domain types:
aggregate compartmental ODEs, stochastic agent-based simulation on explicit
contact networks, and deterministic per-agent mean-field dynamics. On a
complete network with homogeneous rates the layers reduce to one another,
and the test suite executes those reductions. An intervention engine and a
sectoral input-output coupling sit on top; the ``episim`` CLI runs scenario
files reproducibly.
"""

__version__ = "0.1.0"

from .core import (
    DEFAULT_DT,
    CompartmentState,
    EpidemicParams,
    IntegrationError,
    SummaryStats,
    Trajectory,
    integrate_fixed_step,
    trajectory_stats,
)
from .compartmental import (
    CompartmentalKind,
    basic_reproduction_number,
    doubling_time,
    simulate_compartmental,
    sir_derivative,
    sird_derivative,
    sirs_derivative,
)
from .network import (
    ContactNetwork,
    DegreeStats,
    TransmissionMatrix,
    average_degree,
    barabasi_albert,
    complete_network,
    degree_statistics,
    erdos_renyi,
    load_edge_list,
    save_edge_list,
    transmission_from_network,
    watts_strogatz,
)
from .meanfield import (
    ProbabilityState,
    aggregate_counts,
    aggregate_equivalent_params,
    aggregate_trajectory,
    effective_beta,
    homogeneous_reduction,
    integrate_meanfield,
    meanfield_derivative,
    uniform_probability_state,
)
from .abm import (
    AgentPopulation,
    EnsembleResult,
    OutbreakStats,
    abm_step,
    derive_replica_seed,
    monte_carlo,
    outbreak_size_distribution,
    simulate_abm,
)
from .interventions import (
    HealthcareCapacity,
    Intervention,
    InterventionKind,
    InterventionSchedule,
    apply_compartmentalization,
    apply_density_reduction,
    apply_transmission_scale,
    apply_vaccination,
    run_scheduled,
)
from .econ import (
    CoupledEpidemic,
    IOTable,
    SectorShock,
    ShockMapping,
    epidemic_shock,
    leontief_output,
    load_io_table,
    shocked_output,
    simulate_coupled,
)
from .scenario import Scenario, ScenarioError, load_scenario, parse_scenario
