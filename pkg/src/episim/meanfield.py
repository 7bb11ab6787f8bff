"""Deterministic per-agent probability dynamics and their aggregate reductions.

Each agent carries probabilities (p_s, p_i, p_r) of being susceptible,
infected, or recovered. Under statistical independence the folded per-agent
transmission risk is beta_i = sum_j T[j, i] * p_i(j), and the system closes
into N coupled three-state ODEs. On a complete network with self-loops and
homogeneous rates, the aggregated dynamics coincide with the aggregate SIR
model exactly, which this module exposes as executable reductions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_DT,
    CompartmentState,
    EpidemicParams,
    IntegrationError,
    Trajectory,
    integrate_fixed_step,
)
from .network import ContactNetwork, TransmissionMatrix, average_degree

PROBABILITY_TOL = 1e-9


@dataclass
class ProbabilityState:
    """Per-agent state probabilities; each agent's three entries sum to one."""

    p_s: np.ndarray
    p_i: np.ndarray
    p_r: np.ndarray

    def __post_init__(self) -> None:
        self.p_s = np.asarray(self.p_s, dtype=float)
        self.p_i = np.asarray(self.p_i, dtype=float)
        self.p_r = np.asarray(self.p_r, dtype=float)
        if not (self.p_s.shape == self.p_i.shape == self.p_r.shape) or self.p_s.ndim != 1:
            raise ValueError("probability vectors must be 1-D and equally sized")
        stacked = np.stack([self.p_s, self.p_i, self.p_r])
        if stacked.size == 0:
            raise ValueError("probability state needs at least one agent")
        if stacked.min() < -PROBABILITY_TOL or stacked.max() > 1 + PROBABILITY_TOL:
            raise ValueError("probabilities must lie in [0, 1]")
        sums = stacked.sum(axis=0)
        if np.max(np.abs(sums - 1.0)) > PROBABILITY_TOL:
            raise ValueError("per-agent probabilities must sum to 1")

    @property
    def n_agents(self) -> int:
        return self.p_s.size

    def as_array(self) -> np.ndarray:
        return np.stack([self.p_s, self.p_i, self.p_r])


def _check_dimensions(t_matrix: TransmissionMatrix, n_agents: int) -> None:
    if t_matrix.n_agents != n_agents:
        raise ValueError(
            f"transmission matrix is for {t_matrix.n_agents} agents, state has {n_agents}"
        )


def effective_beta(t_matrix: TransmissionMatrix, p_state: ProbabilityState) -> np.ndarray:
    """Folded per-agent transmission risk: beta_i = sum_j T[j, i] * p_i(j)."""
    _check_dimensions(t_matrix, p_state.n_agents)
    return t_matrix.transpose_matvec(p_state.p_i)


def meanfield_derivative(
    p_state: ProbabilityState,
    t_matrix: TransmissionMatrix,
    gamma_vec: np.ndarray,
) -> np.ndarray:
    """Per-agent probability flows, stacked as (dp_s, dp_i, dp_r) rows."""
    gamma_vec = np.asarray(gamma_vec, dtype=float)
    if gamma_vec.shape != (p_state.n_agents,):
        raise ValueError("gamma_vec must hold one rate per agent")
    if gamma_vec.size and gamma_vec.min() < 0:
        raise ValueError("recovery rates must be nonnegative")
    beta_i = effective_beta(t_matrix, p_state)
    infection = p_state.p_s * beta_i
    recovery = gamma_vec * p_state.p_i
    return np.stack([-infection, infection - recovery, recovery])


def _meanfield_rhs(t_matrix: TransmissionMatrix, gamma_vec: np.ndarray):
    def f(t, y):
        infection = y[0] * t_matrix.transpose_matvec(y[1])
        recovery = gamma_vec * y[1]
        return np.stack([-infection, infection - recovery, recovery])

    return f


def validate_probability_trajectory(states: np.ndarray, dt: float) -> None:
    """Reject trajectories whose probabilities leave [0, 1] or lose normalization.

    Violations indicate the step size is too large for the dynamics; they are
    surfaced as errors instead of being clamped away.
    """
    if states.min() < -PROBABILITY_TOL or states.max() > 1 + PROBABILITY_TOL:
        sample = int(np.argwhere(
            (states < -PROBABILITY_TOL) | (states > 1 + PROBABILITY_TOL)
        )[0][0])
        raise IntegrationError(
            f"probability left [0, 1] at sample {sample}; reduce dt (currently {dt})"
        )
    drift = np.max(np.abs(states.sum(axis=1) - 1.0))
    if drift > PROBABILITY_TOL:
        raise IntegrationError(
            f"per-agent normalization drifted by {drift:.3e}; reduce dt (currently {dt})"
        )


def integrate_meanfield(
    p0: ProbabilityState,
    t_matrix: TransmissionMatrix,
    gamma_vec: np.ndarray,
    dt: float = DEFAULT_DT,
    t_end: float = 0.0,
) -> Trajectory:
    """RK4 trajectory of the per-agent probabilities, shaped (T, 3, N).

    Uses the same integrator and step policy as the compartmental module, so
    aggregate equivalence checks compare like with like.
    """
    _check_dimensions(t_matrix, p0.n_agents)
    gamma_vec = np.asarray(gamma_vec, dtype=float)
    if gamma_vec.shape != (p0.n_agents,):
        raise ValueError("gamma_vec must hold one rate per agent")
    if gamma_vec.size and gamma_vec.min() < 0:
        raise ValueError("recovery rates must be nonnegative")
    meta = {"model": "meanfield", "dt": dt, "n_agents": p0.n_agents}
    traj = integrate_fixed_step(
        _meanfield_rhs(t_matrix, gamma_vec), p0.as_array(), t_end, dt, meta=meta
    )
    validate_probability_trajectory(traj.states, dt)
    return traj


def aggregate_counts(p_state: ProbabilityState) -> CompartmentState:
    """Expected compartment counts: sums of the per-agent probabilities."""
    return CompartmentState(
        s=float(p_state.p_s.sum()),
        i=float(p_state.p_i.sum()),
        r=float(p_state.p_r.sum()),
    )


def aggregate_trajectory(traj: Trajectory) -> Trajectory:
    """Collapse a (T, 3, N) probability trajectory to expected S, I, R counts."""
    if traj.states.ndim != 3 or traj.states.shape[1] != 3:
        raise ValueError("expected a per-agent probability trajectory")
    counts = traj.states.sum(axis=2)
    return Trajectory(traj.times, counts, columns=("S", "I", "R"), meta=dict(traj.meta))


def uniform_probability_state(state: CompartmentState, n: int) -> ProbabilityState:
    """Give every agent the population shares (S/N, I/N, R/N)."""
    if n < 1:
        raise ValueError("need at least one agent")
    if state.d != 0:
        raise ValueError("probability states do not track deaths")
    total = state.population
    if abs(total - n) > 1e-9 * max(1.0, n):
        raise ValueError(f"state sums to {total!r}, expected {n}")
    ones = np.ones(n)
    return ProbabilityState(
        p_s=ones * (state.s / n),
        p_i=ones * (state.i / n),
        p_r=ones * (state.r / n),
    )


def aggregate_equivalent_params(
    t_matrix: TransmissionMatrix,
    gamma_vec: np.ndarray,
    n: int,
) -> tuple[float, float, float]:
    """Aggregate-equivalent (beta_eff, gamma_eff, r0) of a heterogeneous system.

    beta_eff is the full double sum of the transmission matrix divided by N^2
    and gamma_eff the mean recovery rate; r0 is their ratio. For a uniform
    rate on a complete network with self-loops this returns the homogeneous
    (beta, gamma, beta/gamma) exactly: the double sum is computed as
    rate * link-count, so rate * (N^2 / N^2) suffers no float summation error.
    """
    if n < 1:
        raise ValueError("need at least one agent")
    _check_dimensions(t_matrix, n)
    gamma_vec = np.asarray(gamma_vec, dtype=float)
    if gamma_vec.shape != (n,):
        raise ValueError("gamma_vec must hold one rate per agent")
    if t_matrix.uniform_rate is not None:
        beta_eff = t_matrix.uniform_rate * (t_matrix.nnz / n**2)
    else:
        beta_eff = t_matrix.total() / n**2
    if gamma_vec.size and np.ptp(gamma_vec) == 0:
        gamma_eff = float(gamma_vec[0])
    else:
        gamma_eff = float(gamma_vec.mean())
    if gamma_eff <= 0:
        raise ValueError("r0 needs a positive mean recovery rate")
    return beta_eff, gamma_eff, beta_eff / gamma_eff


def homogeneous_reduction(
    beta: float, net: ContactNetwork, gamma: float
) -> EpidemicParams:
    """Effective aggregate SIR parameters for homogeneous rates on a network.

    The effective per-pairing rate is beta * n / N with n the average degree;
    on a complete network (n = N) this returns beta exactly.
    """
    scale = average_degree(net) / net.n_agents
    return EpidemicParams(beta=beta * scale, gamma=gamma)
