"""Scenario files: a strict TOML format with explicit sections.

Sections are [model], [population], [network], [epidemic], [[interventions]],
[econ], [run], and [output]. Unknown keys are errors, not warnings, and
validation reports every violation it finds rather than stopping at the
first. Defaults are applied explicitly and echoed into the run metadata, so
the effective configuration is always fully spelled out. The README carries
the complete field table.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .compartmental import CompartmentalKind
from .core import DEFAULT_DT, EpidemicParams
from .econ import IOTable, ShockMapping, load_io_table
from .interventions import (
    Intervention,
    InterventionKind,
    InterventionSchedule,
    contiguous_partition,
)
from .network import ContactNetwork, edge_list_agent_count, load_edge_list

OUTPUT_DIR_ENV = "EPISIM_OUTPUT_DIR"

_MODELS = ("compartmental", "abm", "meanfield", "coupled")
_VARIANTS = ("sir", "sird", "sirs")
_ENGINES = ("compartmental", "meanfield", "abm")
_GENERATORS = ("complete", "erdos_renyi", "watts_strogatz", "barabasi_albert", "edge_list")
_REQUIRED = object()


class ScenarioError(ValueError):
    """Carries every validation problem found in a scenario."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__(
            "invalid scenario:\n" + "\n".join(f"  - {p}" for p in self.problems)
        )


class _Section:
    """Key-by-key reader that records type errors and leftover unknown keys."""

    def __init__(self, name: str, data: dict, problems: list):
        self.name = name
        self.data = dict(data)
        self.problems = problems

    def take(self, key, expect, default=_REQUIRED, check=None, describe=""):
        if key not in self.data:
            if default is _REQUIRED:
                self.problems.append(f"[{self.name}] missing required key '{key}'")
                return None
            return default
        value = self.data.pop(key)
        if expect == "int":
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif expect == "float":
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if ok:
                value = float(value)
        elif expect == "str":
            ok = isinstance(value, str)
        elif expect == "int_list":
            ok = isinstance(value, list) and all(
                isinstance(v, int) and not isinstance(v, bool) for v in value
            )
        elif expect == "table":
            ok = isinstance(value, dict)
        else:  # pragma: no cover - internal misuse
            raise AssertionError(expect)
        if not ok:
            self.problems.append(
                f"[{self.name}] key '{key}' must be a {expect.replace('_', ' ')}, got {value!r}"
            )
            return None
        if check is not None and not check(value):
            self.problems.append(f"[{self.name}] key '{key}' {describe}, got {value!r}")
            return None
        return value

    def finish(self):
        for key in self.data:
            self.problems.append(f"[{self.name}] unknown key '{key}'")


@dataclass
class EconSpec:
    table_path: str
    table: IOTable
    mapping: ShockMapping
    lockdown_on: float
    lockdown_off: float
    transmission_scale: float
    sickness_absence: float


@dataclass
class Scenario:
    """A fully validated run configuration."""

    model: str
    variant: CompartmentalKind
    engine: str | None
    n: int
    initial_infected: int | None
    infected_agents: list[int] | None
    initial_recovered: int
    params: EpidemicParams
    network: dict | None
    loaded_network: ContactNetwork | None
    interventions: list[Intervention]
    econ: EconSpec | None
    dt: float
    t_end: float
    replicas: int
    seed: int
    workers: int
    output: dict
    effective: dict = field(default_factory=dict)

    def schedule(self) -> InterventionSchedule:
        return InterventionSchedule(entries=list(self.interventions))


def _network_required(model: str, engine: str | None) -> bool:
    if model in ("abm", "meanfield"):
        return True
    return model == "coupled" and engine != "compartmental"


def parse_scenario(text: str, base_dir: str | os.PathLike | None = None) -> Scenario:
    """Parse and validate scenario text; raises ScenarioError listing every problem."""
    base = Path(base_dir) if base_dir is not None else Path(".")
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"TOML syntax error: {exc}"]) from exc

    problems: list[str] = []
    known_sections = (
        "model",
        "population",
        "network",
        "epidemic",
        "interventions",
        "econ",
        "run",
        "output",
    )
    for key in raw:
        if key not in known_sections:
            problems.append(f"unknown section '{key}'")
    for name in ("model", "population", "epidemic", "run"):
        if name not in raw:
            problems.append(f"missing required section [{name}]")
    if problems:
        pass  # keep collecting what we can below

    model_sec = _Section("model", raw.get("model", {}), problems)
    model = model_sec.take("kind", "str", check=lambda v: v in _MODELS,
                           describe=f"must be one of {', '.join(_MODELS)}")
    variant_name = model_sec.take("variant", "str", default="sir",
                                  check=lambda v: v in _VARIANTS,
                                  describe=f"must be one of {', '.join(_VARIANTS)}")
    engine = None
    if model == "coupled":
        engine = model_sec.take("engine", "str", default="meanfield",
                                check=lambda v: v in _ENGINES,
                                describe=f"must be one of {', '.join(_ENGINES)}")
    elif "engine" in model_sec.data:
        problems.append("[model] key 'engine' is only valid for coupled runs")
        model_sec.data.pop("engine")
    model_sec.finish()

    pop_sec = _Section("population", raw.get("population", {}), problems)
    n = pop_sec.take("n", "int", check=lambda v: v >= 1, describe="must be >= 1")
    initial_infected = pop_sec.take("initial_infected", "int", default=None,
                                    check=lambda v: v >= 0, describe="must be >= 0")
    infected_agents = pop_sec.take("infected_agents", "int_list", default=None)
    initial_recovered = pop_sec.take("initial_recovered", "int", default=0,
                                     check=lambda v: v >= 0, describe="must be >= 0")
    pop_sec.finish()
    if initial_infected is None and infected_agents is None:
        problems.append("[population] one of 'initial_infected' or 'infected_agents' is required")
    if initial_infected is not None and infected_agents is not None:
        problems.append("[population] give only one of 'initial_infected' and 'infected_agents'")
    if infected_agents is not None and model in ("compartmental",):
        problems.append("[population] 'infected_agents' needs an agent-level model")
    if infected_agents is not None and n is not None:
        if any(a < 0 or a >= n for a in infected_agents):
            problems.append("[population] infected agent index out of range")
        if len(set(infected_agents)) != len(infected_agents):
            problems.append("[population] infected agent indices must be unique")
    if n is not None and initial_recovered is not None:
        seeded = initial_infected if initial_infected is not None else len(infected_agents or [])
        if seeded is not None and seeded + initial_recovered > n:
            problems.append("[population] initial counts exceed the population")

    epi_sec = _Section("epidemic", raw.get("epidemic", {}), problems)
    beta = epi_sec.take("beta", "float", check=lambda v: v >= 0, describe="must be >= 0")
    gamma = epi_sec.take("gamma", "float", check=lambda v: v >= 0, describe="must be >= 0")
    mu = epi_sec.take("mu", "float", default=None, check=lambda v: v >= 0, describe="must be >= 0")
    xi = epi_sec.take("xi", "float", default=None, check=lambda v: v >= 0, describe="must be >= 0")
    epi_sec.finish()
    if variant_name == "sird" and mu is None:
        problems.append("[epidemic] variant 'sird' requires 'mu'")
    if variant_name == "sirs" and xi is None:
        problems.append("[epidemic] variant 'sirs' requires 'xi'")
    if mu is not None and variant_name != "sird":
        problems.append("[epidemic] 'mu' is only valid with variant 'sird'")
    if xi is not None and variant_name != "sirs":
        problems.append("[epidemic] 'xi' is only valid with variant 'sirs'")
    if model == "meanfield" and variant_name != "sir":
        problems.append("[model] mean-field runs support variant 'sir' only")
    if model == "abm" and variant_name == "sirs":
        problems.append("[model] agent-based runs do not support waning (variant 'sirs')")
    if model == "coupled" and engine in ("meanfield",) and variant_name != "sir":
        problems.append("[model] coupled mean-field runs support variant 'sir' only")
    if model == "coupled" and engine == "abm" and variant_name == "sirs":
        problems.append("[model] coupled agent-based runs do not support variant 'sirs'")

    run_sec = _Section("run", raw.get("run", {}), problems)
    dt = run_sec.take("dt", "float", default=DEFAULT_DT, check=lambda v: v > 0,
                      describe="must be > 0")
    t_end = run_sec.take("t_end", "float", check=lambda v: v >= 0, describe="must be >= 0")
    replicas = run_sec.take("replicas", "int", default=1, check=lambda v: v >= 1,
                            describe="must be >= 1")
    seed = run_sec.take("seed", "int", default=1)
    workers = run_sec.take("workers", "int", default=1, check=lambda v: v >= 1,
                           describe="must be >= 1")
    run_sec.finish()
    if replicas is not None and replicas > 1 and model != "abm":
        problems.append("[run] replicas > 1 is only supported for abm runs")
    if workers is not None and workers > 1 and model != "abm":
        problems.append("[run] workers > 1 is only supported for abm runs")

    out_sec = _Section("output", raw.get("output", {}), problems)
    directory = out_sec.take("directory", "str",
                             default=os.environ.get(OUTPUT_DIR_ENV, "."))
    trajectory_name = out_sec.take("trajectory", "str", default="trajectory.csv")
    metadata_name = out_sec.take("metadata", "str", default="metadata.json")
    summary_name = out_sec.take("summary", "str", default="summary.json")
    replicas_name = out_sec.take("replicas_file", "str", default="replicas.csv")
    out_sec.finish()
    output = {
        "directory": directory,
        "trajectory": trajectory_name,
        "metadata": metadata_name,
        "summary": summary_name,
        "replicas_file": replicas_name,
    }

    network_spec = None
    loaded_network = None
    needs_network = model is not None and _network_required(model, engine)
    if "network" in raw:
        if model is not None and not needs_network:
            problems.append(f"[network] a network section is not valid for model '{model}'")
        net_sec = _Section("network", raw.get("network", {}), problems)
        generator = net_sec.take("generator", "str", check=lambda v: v in _GENERATORS,
                                 describe=f"must be one of {', '.join(_GENERATORS)}")
        declared_n = net_sec.take("n", "int", default=None, check=lambda v: v >= 1,
                                  describe="must be >= 1")
        net_seed = net_sec.take("seed", "int", default=seed if seed is not None else 1)
        network_spec = {"generator": generator, "seed": net_seed}
        if generator == "erdos_renyi":
            network_spec["p"] = net_sec.take("p", "float", check=lambda v: 0 <= v <= 1,
                                             describe="must lie in [0, 1]")
        elif generator == "watts_strogatz":
            network_spec["k"] = net_sec.take("k", "int", check=lambda v: v >= 0 and v % 2 == 0,
                                             describe="must be a nonnegative even integer")
            network_spec["p_rewire"] = net_sec.take("p_rewire", "float",
                                                    check=lambda v: 0 <= v <= 1,
                                                    describe="must lie in [0, 1]")
            if n is not None and network_spec["k"] is not None and network_spec["k"] >= n:
                problems.append("[network] k must be smaller than the population size")
        elif generator == "barabasi_albert":
            network_spec["m"] = net_sec.take("m", "int", check=lambda v: v >= 1,
                                             describe="must be >= 1")
            if n is not None and network_spec["m"] is not None and network_spec["m"] >= n:
                problems.append("[network] m must be smaller than the population size")
        elif generator == "edge_list":
            path_value = net_sec.take("path", "str")
            if path_value is not None:
                resolved = str(base / path_value) if not os.path.isabs(path_value) else path_value
                network_spec["path"] = resolved
                try:
                    declared = edge_list_agent_count(resolved)
                    if n is not None and declared != n:
                        problems.append(
                            f"[network] edge list is for {declared} agents, "
                            f"population has {n}"
                        )
                    else:
                        loaded_network = load_edge_list(resolved)
                except OSError as exc:
                    problems.append(f"[network] cannot read edge list: {exc}")
                except ValueError as exc:
                    problems.append(f"[network] {exc}")
        net_sec.finish()
        if declared_n is not None and n is not None and declared_n != n:
            problems.append(
                f"[network] network size {declared_n} does not match population size {n}"
            )
    elif needs_network:
        problems.append(f"[network] model '{model}' requires a network section")

    interventions: list[Intervention] = []
    raw_interventions = raw.get("interventions", [])
    if raw_interventions and model in ("compartmental", "coupled"):
        problems.append(
            "[interventions] scheduled interventions need an abm or meanfield run"
            + ("; coupled runs use the econ lockdown trigger" if model == "coupled" else "")
        )
    elif not isinstance(raw_interventions, list):
        problems.append("[interventions] must be an array of tables ([[interventions]])")
    else:
        for index, item in enumerate(raw_interventions):
            sec = _Section(f"interventions[{index}]", item, problems)
            kind_names = [k.value for k in InterventionKind]
            kind = sec.take("kind", "str", check=lambda v: v in kind_names,
                            describe=f"must be one of {', '.join(kind_names)}")
            fields = {
                "at": sec.take("at", "float", default=None),
                "trigger_infected_fraction": sec.take("trigger_infected_fraction", "float", default=None),
                "until": sec.take("until", "float", default=None),
                "duration": sec.take("duration", "float", default=None),
                "fraction": sec.take("fraction", "float", default=None),
                "factor": sec.take("factor", "float", default=None),
                "cut_fraction": sec.take("cut_fraction", "float", default=None),
                "seed": sec.take("seed", "int", default=None),
            }
            communities = sec.take("communities", "int_list", default=None)
            sec.finish()
            if kind is None:
                continue
            partition = None
            if communities is not None:
                if n is not None:
                    try:
                        partition = contiguous_partition(communities, n)
                    except ValueError as exc:
                        problems.append(f"[interventions[{index}]] {exc}")
                        continue
            try:
                interventions.append(Intervention(kind=kind, partition=partition, **fields))
            except ValueError as exc:
                problems.append(f"[interventions[{index}]] {exc}")

    econ_spec = None
    if "econ" in raw:
        if model is not None and model != "coupled":
            problems.append("[econ] econ requires coupled model")
        econ_sec = _Section("econ", raw.get("econ", {}), problems)
        table_path = econ_sec.take("table", "str")
        sickness = econ_sec.take("sickness_absence", "float", default=0.0,
                                 check=lambda v: v >= 0, describe="must be >= 0")
        lockdown_on = econ_sec.take("lockdown_on", "float", check=lambda v: v > 0,
                                    describe="must be > 0")
        lockdown_off = econ_sec.take("lockdown_off", "float", check=lambda v: v >= 0,
                                     describe="must be >= 0")
        scale = econ_sec.take("transmission_scale", "float", check=lambda v: v >= 0,
                              describe="must be >= 0")
        closure = econ_sec.take("closure", "table", default={})
        demand_sens = econ_sec.take("demand_sensitivity", "table", default={})
        econ_sec.finish()
        if lockdown_on is not None and lockdown_off is not None and lockdown_off >= lockdown_on:
            problems.append("[econ] lockdown_off must be below lockdown_on")
        table = None
        if table_path is not None:
            resolved = str(base / table_path) if not os.path.isabs(table_path) else table_path
            try:
                table = load_io_table(resolved)
            except OSError as exc:
                problems.append(f"[econ] cannot read table: {exc}")
            except ValueError as exc:
                problems.append(f"[econ] {exc}")
        mapping = None
        if table is not None and isinstance(closure, dict) and isinstance(demand_sens, dict):
            try:
                mapping = ShockMapping.for_table(
                    table, closure, demand_sens, sickness_absence=sickness or 0.0
                )
            except (TypeError, ValueError) as exc:
                problems.append(f"[econ] {exc}")
        if (
            table is not None
            and mapping is not None
            and None not in (lockdown_on, lockdown_off, scale)
        ):
            econ_spec = EconSpec(
                table_path=table_path,
                table=table,
                mapping=mapping,
                lockdown_on=lockdown_on,
                lockdown_off=lockdown_off,
                transmission_scale=scale,
                sickness_absence=sickness or 0.0,
            )
    elif model == "coupled":
        problems.append("[econ] coupled model requires an econ section")

    params = None
    if beta is not None and gamma is not None:
        try:
            params = EpidemicParams(beta=beta, gamma=gamma, mu=mu, xi=xi)
        except ValueError as exc:
            problems.append(f"[epidemic] {exc}")

    if problems:
        raise ScenarioError(problems)

    effective = {
        "model": {"kind": model, "variant": variant_name,
                  **({"engine": engine} if model == "coupled" else {})},
        "population": {
            "n": n,
            "initial_infected": initial_infected,
            "infected_agents": infected_agents,
            "initial_recovered": initial_recovered,
        },
        "network": network_spec,
        "epidemic": {"beta": beta, "gamma": gamma, "mu": mu, "xi": xi},
        "interventions": [
            {
                "kind": entry.kind.value,
                "at": entry.at,
                "trigger_infected_fraction": entry.trigger_infected_fraction,
                "until": entry.until,
                "duration": entry.duration,
                "fraction": entry.fraction,
                "factor": entry.factor,
                "cut_fraction": entry.cut_fraction,
                "communities": None if entry.partition is None
                else np.bincount(entry.partition).tolist(),
                "seed": entry.seed,
            }
            for entry in interventions
        ],
        "econ": None if econ_spec is None else {
            "table": econ_spec.table_path,
            "sectors": list(econ_spec.table.sectors),
            "sickness_absence": econ_spec.sickness_absence,
            "lockdown_on": econ_spec.lockdown_on,
            "lockdown_off": econ_spec.lockdown_off,
            "transmission_scale": econ_spec.transmission_scale,
            "closure": {s: float(v) for s, v in zip(econ_spec.table.sectors, econ_spec.mapping.closure)},
            "demand_sensitivity": {s: float(v) for s, v in zip(econ_spec.table.sectors, econ_spec.mapping.demand_sensitivity)},
        },
        "run": {"dt": dt, "t_end": t_end, "replicas": replicas, "seed": seed,
                "workers": workers},
        "output": dict(output),
    }

    return Scenario(
        model=model,
        variant=CompartmentalKind(variant_name),
        engine=engine,
        n=n,
        initial_infected=initial_infected,
        infected_agents=infected_agents,
        initial_recovered=initial_recovered,
        params=params,
        network=network_spec,
        loaded_network=loaded_network,
        interventions=interventions,
        econ=econ_spec,
        dt=dt,
        t_end=t_end,
        replicas=replicas,
        seed=seed,
        workers=workers,
        output=output,
        effective=effective,
    )


def load_scenario(path: str | os.PathLike) -> Scenario:
    """Read and parse a scenario file; relative data paths resolve beside it."""
    path = Path(path)
    return parse_scenario(path.read_text(), base_dir=path.parent)
