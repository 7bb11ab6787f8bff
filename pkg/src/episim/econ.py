"""Sectoral input-output economy coupled to epidemic state.

A static Leontief solve x = A x + d maps final demand to gross output each
sample. Epidemic state enters through per-sector labor and demand shocks;
an infected-fraction trigger with hysteresis switches a lockdown that both
scales transmission and marks closed sectors. The aggregate output index is
gross-output based (sum of outputs over the baseline sum), not value added.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from . import compartmental as _compartmental
from .abm import AgentPopulation, _StepEngine
from .compartmental import CompartmentalKind
from .core import (
    CompartmentState,
    EpidemicParams,
    IntegrationError,
    Trajectory,
    rk4_step,
    time_grid,
)
from .interventions import apply_transmission_scale
from .meanfield import PROBABILITY_TOL, ProbabilityState
from .network import TransmissionMatrix

LEONTIEF_RTOL = 1e-9


@dataclass
class IOTable:
    """Technical coefficients, baseline final demand, and labor shares per sector."""

    sectors: tuple[str, ...]
    coefficients: np.ndarray
    final_demand: np.ndarray
    labor_share: np.ndarray

    def __post_init__(self) -> None:
        self.sectors = tuple(str(s) for s in self.sectors)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.final_demand = np.asarray(self.final_demand, dtype=float)
        self.labor_share = np.asarray(self.labor_share, dtype=float)
        n = len(self.sectors)
        if n == 0:
            raise ValueError("need at least one sector")
        if len(set(self.sectors)) != n:
            raise ValueError("sector names must be unique")
        if self.coefficients.shape != (n, n):
            raise ValueError(f"coefficient matrix must be {n}x{n}")
        if self.final_demand.shape != (n,) or self.labor_share.shape != (n,):
            raise ValueError("demand and labor share must hold one value per sector")
        if self.coefficients.min() < 0:
            raise ValueError("technical coefficients must be nonnegative")
        if self.final_demand.min() < 0:
            raise ValueError("final demand must be nonnegative")
        if self.labor_share.min() < 0 or self.labor_share.max() > 1:
            raise ValueError("labor shares must lie in [0, 1]")
        radius = float(np.max(np.abs(np.linalg.eigvals(self.coefficients))))
        if radius >= 1:
            raise ValueError(
                f"economy is not productive: spectral radius {radius:.6f} must be < 1"
            )

    @property
    def n_sectors(self) -> int:
        return len(self.sectors)


def load_io_table(path) -> IOTable:
    """Read the CSV format: sector-name header, n coefficient rows, demand row, labor-share row."""
    with open(path) as handle:
        rows = [line.strip() for line in handle if line.strip()]
    if not rows:
        raise ValueError(f"{path}: empty input-output table")
    sectors = [name.strip() for name in rows[0].split(",")]
    n = len(sectors)
    if len(rows) != n + 3:
        raise ValueError(
            f"{path}: expected {n} coefficient rows plus demand and labor-share rows, "
            f"got {len(rows) - 1} data rows"
        )
    data = []
    for line_number, row in enumerate(rows[1:], start=2):
        values = [v.strip() for v in row.split(",")]
        if len(values) != n:
            raise ValueError(f"{path}:{line_number}: expected {n} values, got {len(values)}")
        try:
            data.append([float(v) for v in values])
        except ValueError as exc:
            raise ValueError(f"{path}:{line_number}: non-numeric value") from exc
    matrix = np.array(data)
    return IOTable(
        sectors=tuple(sectors),
        coefficients=matrix[:n],
        final_demand=matrix[n],
        labor_share=matrix[n + 1],
    )


@dataclass
class SectorShock:
    """Per-sector multipliers: labor availability in [0, 1], demand >= 0."""

    labor_multiplier: np.ndarray
    demand_multiplier: np.ndarray

    def __post_init__(self) -> None:
        self.labor_multiplier = np.asarray(self.labor_multiplier, dtype=float)
        self.demand_multiplier = np.asarray(self.demand_multiplier, dtype=float)
        if self.labor_multiplier.min() < 0 or self.labor_multiplier.max() > 1:
            raise ValueError("labor multipliers must lie in [0, 1]")
        if self.demand_multiplier.min() < 0:
            raise ValueError("demand multipliers must be nonnegative")


@dataclass
class ShockMapping:
    """Per-sector sensitivities mapping epidemic state to shocks.

    ``closure`` is the labor lost per sector under lockdown, and
    ``demand_sensitivity`` the demand lost under lockdown;
    ``sickness_absence`` scales how strongly the infected fraction removes
    labor (weighted by the table's labor shares).
    """

    sectors: tuple[str, ...]
    labor_share: np.ndarray
    closure: np.ndarray
    demand_sensitivity: np.ndarray
    sickness_absence: float = 0.0

    @classmethod
    def for_table(
        cls,
        table: IOTable,
        closure: Mapping[str, float],
        demand_sensitivity: Mapping[str, float],
        sickness_absence: float = 0.0,
    ) -> "ShockMapping":
        """Build a mapping aligned to the table's sectors; every sector must be covered."""
        problems = []
        for name, mapping in (("closure", closure), ("demand_sensitivity", demand_sensitivity)):
            missing = [s for s in table.sectors if s not in mapping]
            unknown = [s for s in mapping if s not in table.sectors]
            if missing:
                problems.append(f"{name} is missing sectors: {', '.join(missing)}")
            if unknown:
                problems.append(f"{name} names unknown sectors: {', '.join(unknown)}")
        if problems:
            raise ValueError("; ".join(problems))
        return cls(
            sectors=table.sectors,
            labor_share=table.labor_share.copy(),
            closure=np.array([float(closure[s]) for s in table.sectors]),
            demand_sensitivity=np.array(
                [float(demand_sensitivity[s]) for s in table.sectors]
            ),
            sickness_absence=float(sickness_absence),
        )


def leontief_output(table: IOTable, demand: np.ndarray) -> np.ndarray:
    """Gross output solving x = A x + d by a direct linear solve."""
    demand = np.asarray(demand, dtype=float)
    if demand.shape != (table.n_sectors,):
        raise ValueError("demand must hold one value per sector")
    if demand.size and demand.min() < 0:
        raise ValueError("demand must be nonnegative")
    identity = np.eye(table.n_sectors)
    x = np.linalg.solve(identity - table.coefficients, demand)
    residual = np.linalg.norm(x - table.coefficients @ x - demand)
    bound = LEONTIEF_RTOL * max(np.linalg.norm(demand), np.finfo(float).tiny)
    if residual > bound:
        raise RuntimeError(
            f"Leontief solve residual {residual:.3e} exceeds {bound:.3e}"
        )
    return x


def epidemic_shock(
    epi_state: CompartmentState,
    lockdown_active: bool,
    mapping: ShockMapping,
) -> SectorShock:
    """Translate epidemic state and lockdown status into sector multipliers."""
    population = epi_state.population
    infected_fraction = epi_state.i / population if population > 0 else 0.0
    closed = 1.0 if lockdown_active else 0.0
    labor = (
        1.0
        - mapping.labor_share * infected_fraction * mapping.sickness_absence
        - mapping.closure * closed
    )
    demand = 1.0 - mapping.demand_sensitivity * closed
    return SectorShock(
        labor_multiplier=np.clip(labor, 0.0, 1.0),
        demand_multiplier=np.maximum(demand, 0.0),
    )


def shocked_output(table: IOTable, shock: SectorShock) -> tuple[np.ndarray, float]:
    """Per-sector output under a shock plus the aggregate output index.

    Demand multipliers rescale final demand before an unconstrained solve;
    labor multipliers then cap each sector at its share of baseline output.
    """
    baseline = leontief_output(table, table.final_demand)
    shocked = leontief_output(table, shock.demand_multiplier * table.final_demand)
    output = np.minimum(shocked, shock.labor_multiplier * baseline)
    baseline_total = baseline.sum()
    index = float(output.sum() / baseline_total) if baseline_total > 0 else 1.0
    return output, index


@dataclass
class CoupledEpidemic:
    """Epidemic side of a coupled run; build via the class methods."""

    model: str
    kind: CompartmentalKind = CompartmentalKind.SIR
    params: EpidemicParams | None = None
    initial: CompartmentState | None = None
    p0: ProbabilityState | None = None
    pop0: AgentPopulation | None = None
    t_matrix: TransmissionMatrix | None = None
    gamma_vec: np.ndarray | None = None

    @classmethod
    def compartmental(
        cls, kind: CompartmentalKind, params: EpidemicParams, initial: CompartmentState
    ) -> "CoupledEpidemic":
        return cls(model="compartmental", kind=CompartmentalKind(kind), params=params, initial=initial)

    @classmethod
    def meanfield(
        cls, p0: ProbabilityState, t_matrix: TransmissionMatrix, gamma_vec: np.ndarray
    ) -> "CoupledEpidemic":
        return cls(model="meanfield", p0=p0, t_matrix=t_matrix,
                   gamma_vec=np.asarray(gamma_vec, dtype=float))

    @classmethod
    def abm(cls, pop0: AgentPopulation, t_matrix: TransmissionMatrix) -> "CoupledEpidemic":
        return cls(model="abm", pop0=pop0, t_matrix=t_matrix)


class _CompartmentalSide:
    def __init__(self, spec: CoupledEpidemic, scale: float):
        _compartmental._validate_kind(spec.kind, spec.params, spec.initial)
        self.with_deaths = spec.kind is CompartmentalKind.SIRD
        self.y = spec.initial.as_array(include_dead=self.with_deaths)
        self._rhs_open = _compartmental._rhs(spec.kind, spec.params)
        self._rhs_locked = _compartmental._rhs(
            spec.kind, replace(spec.params, beta=spec.params.beta * scale)
        )
        self.lockdown = False
        self.n = spec.initial.population

    def counts(self):
        if self.with_deaths:
            return tuple(float(v) for v in self.y)
        return float(self.y[0]), float(self.y[1]), float(self.y[2]), 0.0

    def step(self, t, h):
        rhs = self._rhs_locked if self.lockdown else self._rhs_open
        self.y = rk4_step(rhs, t, self.y, h)


class _MeanfieldSide:
    def __init__(self, spec: CoupledEpidemic, scale: float):
        if spec.t_matrix.n_agents != spec.p0.n_agents:
            raise ValueError("transmission matrix size does not match the state")
        if spec.gamma_vec.shape != (spec.p0.n_agents,):
            raise ValueError("gamma_vec must hold one rate per agent")
        self.with_deaths = False
        self.y = spec.p0.as_array()
        self.n = spec.p0.n_agents
        self.gamma_vec = spec.gamma_vec
        self._base = spec.t_matrix
        self._scaled = apply_transmission_scale(spec.t_matrix, scale)
        self.lockdown = False
        self.dt_hint = None

    def counts(self):
        sums = self.y.sum(axis=1)
        return float(sums[0]), float(sums[1]), float(sums[2]), 0.0

    def _check(self):
        if self.y.min() < -PROBABILITY_TOL or self.y.max() > 1 + PROBABILITY_TOL:
            raise IntegrationError("probability left [0, 1]; reduce dt")
        if np.max(np.abs(self.y.sum(axis=0) - 1.0)) > PROBABILITY_TOL:
            raise IntegrationError("per-agent normalization drifted; reduce dt")

    def step(self, t, h):
        matrix = self._scaled if self.lockdown else self._base
        gamma_vec = self.gamma_vec

        def rhs(_, y):
            infection = y[0] * matrix.transpose_matvec(y[1])
            recovery = gamma_vec * y[1]
            return np.stack([-infection, infection - recovery, recovery])

        self.y = rk4_step(rhs, t, self.y, h)
        self._check()


class _AbmSide:
    def __init__(self, spec: CoupledEpidemic, scale: float, seed: int | None):
        if seed is None:
            raise ValueError("coupled abm runs need a seed")
        self.with_deaths = spec.pop0.with_deaths
        self.pop = spec.pop0.copy()
        self.n = self.pop.n_agents
        self._base = spec.t_matrix
        self._scaled = apply_transmission_scale(spec.t_matrix, scale)
        self._engine = _StepEngine(self.pop, spec.t_matrix, np.random.default_rng(seed))
        self._lockdown = False

    @property
    def lockdown(self):
        return self._lockdown

    @lockdown.setter
    def lockdown(self, value: bool):
        if value != self._lockdown:
            self._lockdown = value
            self._engine.swap_matrix(self._scaled if value else self._base)

    def counts(self):
        return tuple(float(v) for v in self.pop.counts())

    def step(self, t, h):
        self._engine.step(h)


def simulate_coupled(
    epi: CoupledEpidemic,
    table: IOTable,
    mapping: ShockMapping,
    lockdown_on: float,
    lockdown_off: float,
    transmission_scale: float,
    dt: float,
    t_end: float,
    seed: int | None = None,
) -> Trajectory:
    """Joint epidemic-economy run with a hysteresis lockdown trigger.

    At each step boundary the lockdown switches on when the infected fraction
    rises above ``lockdown_on`` and off when it falls below ``lockdown_off``;
    while on, transmission is scaled by ``transmission_scale`` and the
    lockdown flag feeds the sector shocks. Each sample records compartment
    counts, per-sector outputs, and the aggregate output index.
    """
    if not 0 <= lockdown_off < lockdown_on:
        raise ValueError("need 0 <= lockdown_off < lockdown_on")
    if transmission_scale < 0:
        raise ValueError("transmission_scale must be nonnegative")
    if mapping.sectors != table.sectors:
        raise ValueError("shock mapping was built for a different table")
    if epi.model == "compartmental":
        side = _CompartmentalSide(epi, transmission_scale)
    elif epi.model == "meanfield":
        side = _MeanfieldSide(epi, transmission_scale)
    elif epi.model == "abm":
        side = _AbmSide(epi, transmission_scale, seed)
    else:
        raise ValueError(f"unknown epidemic model {epi.model!r}")

    times = time_grid(t_end, dt)
    epi_columns = ("S", "I", "R", "D") if side.with_deaths else ("S", "I", "R")
    columns = epi_columns + tuple(f"output_{s}" for s in table.sectors) + ("output_index",)
    states = np.empty((times.size, len(columns)))
    lockdown_log = []
    population = sum(side.counts())

    for idx in range(times.size):
        s, i, r, d = side.counts()
        infected_fraction = i / population if population > 0 else 0.0
        if not side.lockdown and infected_fraction > lockdown_on:
            side.lockdown = True
            lockdown_log.append({"time": float(times[idx]), "action": "lockdown_on"})
        elif side.lockdown and infected_fraction < lockdown_off:
            side.lockdown = False
            lockdown_log.append({"time": float(times[idx]), "action": "lockdown_off"})
        epi_state = CompartmentState(s=s, i=i, r=r, d=d)
        shock = epidemic_shock(epi_state, side.lockdown, mapping)
        outputs, index = shocked_output(table, shock)
        row = [s, i, r] + ([d] if side.with_deaths else [])
        states[idx] = row + list(outputs) + [index]
        if idx < times.size - 1:
            side.step(times[idx], times[idx + 1] - times[idx])

    meta = {
        "model": "coupled",
        "engine": epi.model,
        "dt": dt,
        "lockdown_on": lockdown_on,
        "lockdown_off": lockdown_off,
        "transmission_scale": transmission_scale,
        "lockdown_log": lockdown_log,
    }
    if seed is not None:
        meta["seed"] = seed
    return Trajectory(times, states, columns=columns, meta=meta)
