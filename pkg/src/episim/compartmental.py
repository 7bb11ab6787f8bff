"""Aggregate SIR/SIRD/SIRS dynamics, reproduction number, and growth diagnostics.

Rates follow the raw-count convention: the infection flow is beta*I*S with
beta a per-pairing rate, so a population-level reproduction number R0 for a
well-mixed population of size N corresponds to beta = R0 * gamma / N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    DEFAULT_DT,
    CompartmentState,
    EpidemicParams,
    Trajectory,
    integrate_fixed_step,
)


class CompartmentalKind(str, Enum):
    SIR = "sir"
    SIRD = "sird"
    SIRS = "sirs"


@dataclass
class CompartmentDerivative:
    """Instantaneous compartment flows; components sum to zero (closed system)."""

    ds: float
    di: float
    dr: float
    dd: float = 0.0

    @property
    def total(self) -> float:
        return self.ds + self.di + self.dr + self.dd


def sir_derivative(state: CompartmentState, params: EpidemicParams) -> CompartmentDerivative:
    """dS = -beta*I*S, dI = beta*I*S - gamma*I, dR = gamma*I."""
    infection = params.beta * state.i * state.s
    recovery = params.gamma * state.i
    return CompartmentDerivative(-infection, infection - recovery, recovery)


def sird_derivative(state: CompartmentState, params: EpidemicParams) -> CompartmentDerivative:
    """SIR with deaths leaving I at rate mu, competing with recovery."""
    if params.mu is None:
        raise ValueError("SIRD requires a death rate mu")
    infection = params.beta * state.i * state.s
    recovery = params.gamma * state.i
    deaths = params.mu * state.i
    return CompartmentDerivative(-infection, infection - recovery - deaths, recovery, deaths)


def sirs_derivative(state: CompartmentState, params: EpidemicParams) -> CompartmentDerivative:
    """SIR with immunity waning R -> S at rate xi; death is absorbing, so only R wanes."""
    if params.xi is None:
        raise ValueError("SIRS requires a waning rate xi")
    infection = params.beta * state.i * state.s
    recovery = params.gamma * state.i
    waning = params.xi * state.r
    return CompartmentDerivative(-infection + waning, infection - recovery, recovery - waning)


def basic_reproduction_number(params: EpidemicParams) -> float:
    """beta / gamma, or beta / (gamma + mu) when a death rate is present."""
    denominator = params.gamma + (params.mu or 0.0)
    if denominator <= 0:
        raise ValueError("basic reproduction number needs gamma + mu > 0")
    return params.beta / denominator


def _validate_kind(kind: CompartmentalKind, params: EpidemicParams, initial: CompartmentState):
    if kind is CompartmentalKind.SIRD:
        if params.mu is None:
            raise ValueError("SIRD requires a death rate mu")
    elif kind is CompartmentalKind.SIRS:
        if params.xi is None:
            raise ValueError("SIRS requires a waning rate xi")
    if kind is not CompartmentalKind.SIRD and initial.d != 0:
        raise ValueError(f"{kind.value} does not track deaths; initial d must be 0")


def _rhs(kind: CompartmentalKind, params: EpidemicParams):
    beta, gamma = params.beta, params.gamma
    if kind is CompartmentalKind.SIR:

        def f(t, y):
            infection = beta * y[1] * y[0]
            recovery = gamma * y[1]
            return np.array([-infection, infection - recovery, recovery])

    elif kind is CompartmentalKind.SIRD:
        mu = params.mu

        def f(t, y):
            infection = beta * y[1] * y[0]
            recovery = gamma * y[1]
            deaths = mu * y[1]
            return np.array([-infection, infection - recovery - deaths, recovery, deaths])

    else:
        xi = params.xi

        def f(t, y):
            infection = beta * y[1] * y[0]
            recovery = gamma * y[1]
            waning = xi * y[2]
            return np.array([-infection + waning, infection - recovery, recovery - waning])

    return f


def simulate_compartmental(
    kind: CompartmentalKind,
    params: EpidemicParams,
    initial: CompartmentState,
    t_end: float,
    dt: float = DEFAULT_DT,
) -> Trajectory:
    """Integrate the chosen compartmental variant with the shared RK4 integrator."""
    kind = CompartmentalKind(kind)
    _validate_kind(kind, params, initial)
    with_deaths = kind is CompartmentalKind.SIRD
    y0 = initial.as_array(include_dead=with_deaths)
    columns = ("S", "I", "R", "D") if with_deaths else ("S", "I", "R")
    meta = {
        "model": "compartmental",
        "kind": kind.value,
        "dt": dt,
        "params": {
            "beta": params.beta,
            "gamma": params.gamma,
            "mu": params.mu,
            "xi": params.xi,
        },
    }
    return integrate_fixed_step(_rhs(kind, params), y0, t_end, dt, columns=columns, meta=meta)


def doubling_time(traj: Trajectory, window: tuple[float, float]) -> float | None:
    """Doubling time ln2 / lambda with lambda the OLS slope of ln I(t) over window.

    Returns None when the fitted growth rate is nonpositive (not growing).
    Raises ValueError if the window leaves the trajectory, holds fewer than
    two samples, or contains nonpositive infected counts.
    """
    t0, t1 = window
    times = traj.times
    if not (t0 < t1):
        raise ValueError("window must satisfy t0 < t1")
    if t0 < times[0] - 1e-12 or t1 > times[-1] + 1e-12:
        raise ValueError("window lies outside the trajectory")
    mask = (times >= t0 - 1e-12) & (times <= t1 + 1e-12)
    if int(mask.sum()) < 2:
        raise ValueError("window must contain at least two samples")
    infected = traj.column("I")[mask]
    if np.any(infected <= 0):
        raise ValueError("doubling time needs strictly positive infected counts in the window")
    slope = np.polyfit(times[mask], np.log(infected), 1)[0]
    if slope <= 1e-12:  # fit noise on a flat series, not growth
        return None
    return math.log(2.0) / slope
