"""Command-line interface: run scenario files, compare trajectories, validate.

``episim run <scenario.toml>`` executes a scenario and writes the trajectory
CSV, a run-metadata JSON, a summary JSON, and (for ensembles) a per-replica
CSV. All content is computed before any file is written and each file is
written atomically, so a failing run leaves no partial outputs. Outputs are
deterministic: rerunning the same scenario yields byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .abm import AgentPopulation, EnsembleResult, monte_carlo, write_replicas_csv
from .compartmental import (
    CompartmentalKind,
    basic_reproduction_number,
    simulate_compartmental,
    doubling_time,
)
from .core import (
    CompartmentState,
    Trajectory,
    atomic_write_text,
    format_float,
    read_trajectory_csv,
    trajectory_stats,
    write_trajectory_csv,
)
from .econ import CoupledEpidemic, simulate_coupled
from .meanfield import (
    ProbabilityState,
    aggregate_equivalent_params,
    uniform_probability_state,
)
from .interventions import run_scheduled
from .network import (
    barabasi_albert,
    complete_network,
    erdos_renyi,
    load_edge_list,
    transmission_from_network,
    watts_strogatz,
)
from .scenario import Scenario, ScenarioError, load_scenario


def _build_network(scenario: Scenario):
    if scenario.loaded_network is not None:
        return scenario.loaded_network
    spec = scenario.network
    n = scenario.n
    generator = spec["generator"]
    if generator == "complete":
        return complete_network(n)
    if generator == "erdos_renyi":
        return erdos_renyi(n, spec["p"], spec["seed"])
    if generator == "watts_strogatz":
        return watts_strogatz(n, spec["k"], spec["p_rewire"], spec["seed"])
    if generator == "barabasi_albert":
        return barabasi_albert(n, spec["m"], spec["seed"])
    return load_edge_list(spec["path"])


def _initial_counts(scenario: Scenario) -> CompartmentState:
    infected = (
        scenario.initial_infected
        if scenario.initial_infected is not None
        else len(scenario.infected_agents)
    )
    recovered = scenario.initial_recovered
    return CompartmentState(
        s=scenario.n - infected - recovered, i=infected, r=recovered
    )


def _initial_probability_state(scenario: Scenario) -> ProbabilityState:
    n = scenario.n
    if scenario.infected_agents is None:
        return uniform_probability_state(_initial_counts(scenario), n)
    p_i = np.zeros(n)
    p_i[np.asarray(scenario.infected_agents, dtype=np.int64)] = 1.0
    p_r = np.zeros(n)
    if scenario.initial_recovered:
        susceptible = np.flatnonzero(p_i == 0)
        p_r[susceptible[: scenario.initial_recovered]] = 1.0
    p_s = 1.0 - p_i - p_r
    return ProbabilityState(p_s=p_s, p_i=p_i, p_r=p_r)


def _initial_population(scenario: Scenario) -> AgentPopulation:
    mu = scenario.params.mu if scenario.variant is CompartmentalKind.SIRD else None
    if scenario.infected_agents is not None:
        return AgentPopulation.uniform(
            scenario.n,
            scenario.params.gamma,
            infected_agents=scenario.infected_agents,
            n_recovered=scenario.initial_recovered,
            mu=mu,
        )
    return AgentPopulation.uniform(
        scenario.n,
        scenario.params.gamma,
        n_infected=scenario.initial_infected,
        n_recovered=scenario.initial_recovered,
        mu=mu,
    )


def _execute(scenario: Scenario) -> tuple[Trajectory, EnsembleResult | None, dict]:
    """Run the scenario; returns (trajectory, ensemble or None, extra metadata)."""
    extra: dict = {}
    if scenario.model == "compartmental":
        traj = simulate_compartmental(
            scenario.variant,
            scenario.params,
            _initial_counts(scenario),
            scenario.t_end,
            scenario.dt,
        )
        return traj, None, extra

    if scenario.model == "meanfield":
        net = _build_network(scenario)
        t_matrix = transmission_from_network(net, scenario.params.beta)
        gamma_vec = np.full(scenario.n, scenario.params.gamma)
        traj = run_scheduled(
            "meanfield",
            _initial_probability_state(scenario),
            t_matrix,
            scenario.schedule(),
            scenario.dt,
            scenario.t_end,
            seed=scenario.seed,
            gamma_vec=gamma_vec,
        )
        extra["intervention_log"] = traj.meta.get("intervention_log", [])
        extra["equivalent_params"] = _equivalent_params(t_matrix, gamma_vec, scenario.n)
        return traj, None, extra

    if scenario.model == "abm":
        net = _build_network(scenario)
        t_matrix = transmission_from_network(net, scenario.params.beta)
        pop0 = _initial_population(scenario)
        schedule = scenario.schedule() if scenario.interventions else None
        ensemble = monte_carlo(
            pop0,
            t_matrix,
            scenario.dt,
            scenario.t_end,
            scenario.replicas,
            scenario.seed,
            workers=scenario.workers,
            schedule=schedule,
        )
        logs = ensemble.meta.get("intervention_logs", {})
        if logs:
            extra["intervention_logs"] = {str(k): v for k, v in sorted(logs.items())}
        exit_rates = pop0.gamma if pop0.mu is None else pop0.gamma + pop0.mu
        extra["equivalent_params"] = _equivalent_params(t_matrix, exit_rates, scenario.n)
        return ensemble.mean_trajectory, ensemble, extra

    # coupled
    econ = scenario.econ
    if scenario.engine == "compartmental":
        epi = CoupledEpidemic.compartmental(
            scenario.variant, scenario.params, _initial_counts(scenario)
        )
    else:
        net = _build_network(scenario)
        t_matrix = transmission_from_network(net, scenario.params.beta)
        if scenario.engine == "meanfield":
            gamma_vec = np.full(scenario.n, scenario.params.gamma)
            epi = CoupledEpidemic.meanfield(
                _initial_probability_state(scenario), t_matrix, gamma_vec
            )
        else:
            epi = CoupledEpidemic.abm(_initial_population(scenario), t_matrix)
    traj = simulate_coupled(
        epi,
        econ.table,
        econ.mapping,
        econ.lockdown_on,
        econ.lockdown_off,
        econ.transmission_scale,
        scenario.dt,
        scenario.t_end,
        seed=scenario.seed,
    )
    extra["lockdown_log"] = traj.meta.get("lockdown_log", [])
    return traj, None, extra


def _equivalent_params(t_matrix, gamma_vec, n):
    try:
        beta_eff, gamma_eff, r0 = aggregate_equivalent_params(t_matrix, gamma_vec, n)
    except ValueError:
        return None
    return {"beta_eff": beta_eff, "gamma_eff": gamma_eff, "r0": r0}


def _summary(scenario: Scenario, traj: Trajectory, ensemble, extra: dict) -> dict:
    stats = trajectory_stats(traj)
    summary = {
        "model": scenario.model,
        "n": scenario.n,
        "peak_infected": stats.peak_infected,
        "peak_time": stats.peak_time,
        "time_to_peak": stats.time_to_peak,
        "final_size": stats.final_size,
    }
    try:
        window = (float(traj.times[0]), stats.peak_time)
        summary["doubling_time"] = doubling_time(traj, window)
    except ValueError:
        summary["doubling_time"] = None
    r0 = None
    if scenario.model == "compartmental" or (
        scenario.model == "coupled" and scenario.engine == "compartmental"
    ):
        try:
            r0 = basic_reproduction_number(scenario.params)
        except ValueError:
            r0 = None
    elif extra.get("equivalent_params"):
        r0 = extra["equivalent_params"]["r0"]
    summary["r0"] = r0
    if ensemble is not None:
        summary["replicas"] = ensemble.n_replicas
        summary["mean_final_size"] = float(ensemble.replica_final_sizes.mean())
    return summary


def run_scenario(path: str | Path) -> dict:
    """Execute a scenario file; returns the written paths keyed by role."""
    scenario = load_scenario(path)
    traj, ensemble, extra = _execute(scenario)
    summary = _summary(scenario, traj, ensemble, extra)

    metadata = {
        "scenario": scenario.effective,
        "versions": {
            "episim": __version__,
            "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "seeds": {
            "base": scenario.seed,
            "replica_scheme": "SeedSequence((seed, 0, replica)), first uint64 word",
            "intervention_scheme": "SeedSequence((seed, 1, entry_index)), first uint64 word",
        },
    }
    for key in ("intervention_log", "intervention_logs", "lockdown_log"):
        if key in extra:
            metadata[key] = extra[key]

    out_dir = Path(scenario.output["directory"])
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectory": out_dir / scenario.output["trajectory"],
        "metadata": out_dir / scenario.output["metadata"],
        "summary": out_dir / scenario.output["summary"],
    }
    if ensemble is not None:
        paths["replicas"] = out_dir / scenario.output["replicas_file"]
    metadata["outputs"] = {k: str(v.name) for k, v in paths.items()}

    write_trajectory_csv(traj, paths["trajectory"])
    if ensemble is not None:
        write_replicas_csv(ensemble, paths["replicas"])
    atomic_write_text(paths["metadata"], json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    atomic_write_text(paths["summary"], json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


def compare_trajectories(path_a, path_b, tolerance: float) -> tuple[bool, list[str]]:
    """Per-column maximum absolute deviation between two trajectory CSVs."""
    a = read_trajectory_csv(path_a)
    b = read_trajectory_csv(path_b)
    if a.columns != b.columns:
        raise ValueError(f"column schemas differ: {a.columns} vs {b.columns}")
    if a.n_samples != b.n_samples:
        raise ValueError(f"time grids differ in length: {a.n_samples} vs {b.n_samples}")
    if not np.array_equal(a.times, b.times):
        raise ValueError("time grids differ")
    lines = []
    ok = True
    for idx, name in enumerate(a.columns):
        deviation = float(np.max(np.abs(a.states[:, idx] - b.states[:, idx])))
        passed = deviation <= tolerance
        ok = ok and passed
        lines.append(
            f"column {name}: max deviation {format_float(deviation)} "
            f"{'PASS' if passed else 'FAIL'} (tol {format_float(tolerance)})"
        )
    return ok, lines


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="episim", description="Epidemic dynamics simulation toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="execute a scenario file")
    run_parser.add_argument("scenario", help="path to a scenario TOML file")

    validate_parser = sub.add_parser("validate", help="validate a scenario file")
    validate_parser.add_argument("scenario", help="path to a scenario TOML file")

    compare_parser = sub.add_parser("compare", help="compare two trajectory CSVs")
    compare_parser.add_argument("a")
    compare_parser.add_argument("b")
    compare_parser.add_argument("--tol", type=float, required=True,
                                help="maximum allowed absolute deviation per column")

    args = parser.parse_args(argv)

    if args.command == "validate":
        try:
            scenario = load_scenario(args.scenario)
        except (OSError, ScenarioError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(f"OK: {args.scenario} (model={scenario.model}, n={scenario.n})")
        return 0

    if args.command == "run":
        try:
            paths = run_scenario(args.scenario)
        except (OSError, ScenarioError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        except Exception as exc:  # model errors: report, leave no partial outputs
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
        for role in ("trajectory", "replicas", "summary", "metadata"):
            if role in paths:
                print(f"wrote {role}: {paths[role]}")
        return 0

    # compare
    try:
        ok, lines = compare_trajectories(args.a, args.b, args.tol)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for line in lines:
        print(line)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
