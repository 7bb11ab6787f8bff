"""Shared domain types, the trajectory container, and fixed-step ODE integration."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_DT = 0.1

# Tolerance for "nonnegative" count fields; aggregated probabilities may carry
# O(1e-9) integration noise that must not be silently clamped away.
_NEGATIVE_TOL = 1e-6


class IntegrationError(RuntimeError):
    """Numerical integration produced non-finite or out-of-range values."""


@dataclass
class EpidemicParams:
    """Transition rates for the compartmental model family.

    ``beta`` is the per-pairing transmission rate (per unit time per
    infectious-susceptible pair, applied to raw counts; the README documents
    how to rescale from a population-level reproduction number). ``gamma``
    is the recovery rate. ``mu`` (death) and ``xi`` (immunity waning) are
    optional and enable the SIRD and SIRS variants respectively.
    """

    beta: float
    gamma: float
    mu: float | None = None
    xi: float | None = None

    def __post_init__(self) -> None:
        for name in ("beta", "gamma", "mu", "xi"):
            value = getattr(self, name)
            if value is None:
                continue
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and nonnegative, got {value!r}")


@dataclass
class CompartmentState:
    """Aggregate compartment counts of a closed population.

    Counts are real-valued in the ODE context; the agent-based module keeps
    its own integer bookkeeping. ``d`` stays 0 unless deaths are modelled.
    """

    s: float
    i: float
    r: float
    d: float = 0.0

    def __post_init__(self) -> None:
        for name in ("s", "i", "r", "d"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < -_NEGATIVE_TOL:
                raise ValueError(f"compartment {name} must be nonnegative, got {value!r}")

    @property
    def population(self) -> float:
        return self.s + self.i + self.r + self.d

    def as_array(self, include_dead: bool = False) -> np.ndarray:
        if include_dead:
            return np.array([self.s, self.i, self.r, self.d], dtype=float)
        return np.array([self.s, self.i, self.r], dtype=float)


@dataclass
class Trajectory:
    """Time-indexed sequence of model states.

    ``states`` has the sample index on its first axis. Compartment-count
    trajectories are 2-D with labelled ``columns``; per-agent probability
    trajectories are shaped (T, 3, N) with ``columns`` left as None.
    """

    times: np.ndarray
    states: np.ndarray
    columns: tuple[str, ...] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states)
        if self.times.ndim != 1 or self.times.size == 0:
            raise ValueError("times must be a non-empty 1-D array")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.states.shape[0] != self.times.size:
            raise ValueError(
                f"states length {self.states.shape[0]} does not match "
                f"{self.times.size} sample times"
            )
        if self.columns is not None:
            if self.states.ndim != 2 or self.states.shape[1] != len(self.columns):
                raise ValueError("columns do not match the state layout")

    @property
    def n_samples(self) -> int:
        return self.times.size

    def column(self, name: str) -> np.ndarray:
        if self.columns is None or name not in self.columns:
            raise KeyError(f"trajectory has no column {name!r}")
        return self.states[:, self.columns.index(name)]


@dataclass
class SummaryStats:
    """Peak and final-size summary of a compartment-count trajectory."""

    peak_infected: float
    peak_time: float
    time_to_peak: float
    final_size: float


def time_grid(t_end: float, dt: float) -> np.ndarray:
    """Sample times 0, dt, 2 dt, ... with a final partial step landing on t_end."""
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be positive, got {dt!r}")
    if not np.isfinite(t_end) or t_end < 0:
        raise ValueError(f"t_end must be nonnegative, got {t_end!r}")
    if t_end == 0:
        return np.zeros(1)
    ratio = t_end / dt
    n_round = int(round(ratio))
    if n_round >= 1 and abs(ratio - n_round) <= 1e-9 * max(1.0, abs(ratio)):
        times = dt * np.arange(n_round + 1, dtype=float)
        times[-1] = t_end
        return times
    n_full = int(np.floor(ratio))
    times = np.empty(n_full + 2)
    times[: n_full + 1] = dt * np.arange(n_full + 1, dtype=float)
    times[-1] = t_end
    return times


def rk4_step(
    derivative_fn: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    y: np.ndarray,
    h: float,
) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of size h from (t, y)."""
    k1 = _eval_derivative(derivative_fn, t, y)
    k2 = _eval_derivative(derivative_fn, t + 0.5 * h, y + (0.5 * h) * k1)
    k3 = _eval_derivative(derivative_fn, t + 0.5 * h, y + (0.5 * h) * k2)
    k4 = _eval_derivative(derivative_fn, t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _eval_derivative(derivative_fn, t, y):
    k = np.asarray(derivative_fn(t, y), dtype=float)
    if k.shape != y.shape:
        raise IntegrationError(
            f"derivative shape {k.shape} does not match state shape {y.shape}"
        )
    if not np.all(np.isfinite(k)):
        raise IntegrationError(f"non-finite derivative at t={t!r}")
    return k


def integrate_fixed_step(
    derivative_fn: Callable[[float, np.ndarray], np.ndarray],
    initial_state: np.ndarray,
    t_end: float,
    dt: float,
    *,
    columns: tuple[str, ...] | None = None,
    meta: dict | None = None,
) -> Trajectory:
    """Integrate dy/dt = derivative_fn(t, y) with fixed-step RK4.

    Samples at t = 0, dt, 2 dt, ...; the final step is shortened so the
    last sample lands exactly on t_end. The derivative function must be
    side-effect free; non-finite derivative values raise IntegrationError.
    """
    y = np.array(initial_state, dtype=float)
    times = time_grid(t_end, dt)
    states = np.empty((times.size,) + y.shape)
    states[0] = y
    for idx in range(times.size - 1):
        h = times[idx + 1] - times[idx]
        y = rk4_step(derivative_fn, times[idx], y, h)
        states[idx + 1] = y
    return Trajectory(times, states, columns=columns, meta=dict(meta or {}))


def trajectory_stats(traj: Trajectory) -> SummaryStats:
    """Peak infected (first occurrence), its time, and the final size R(+D)."""
    infected = traj.column("I")
    peak_idx = int(np.argmax(infected))
    final = float(traj.column("R")[-1])
    if traj.columns is not None and "D" in traj.columns:
        final += float(traj.column("D")[-1])
    return SummaryStats(
        peak_infected=float(infected[peak_idx]),
        peak_time=float(traj.times[peak_idx]),
        time_to_peak=float(traj.times[peak_idx] - traj.times[0]),
        final_size=final,
    )


def format_float(value: float) -> str:
    """Render a float with 17 significant digits for byte-stable round-trips."""
    return f"{value:.17g}"


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write text to path via a temp file and rename; no partial files remain."""
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def write_trajectory_csv(traj: Trajectory, path: str | os.PathLike) -> None:
    """Write a labelled trajectory as CSV: header line, then one row per sample.

    Floats carry 17 significant digits; integer-typed states are written as
    integers. Identical trajectories serialize to byte-identical files.
    """
    if traj.columns is None:
        raise ValueError("only trajectories with labelled columns can be written as CSV")
    integer_states = np.issubdtype(traj.states.dtype, np.integer)
    lines = ["t," + ",".join(traj.columns)]
    for k in range(traj.n_samples):
        row = [format_float(traj.times[k])]
        if integer_states:
            row.extend(str(int(v)) for v in traj.states[k])
        else:
            row.extend(format_float(v) for v in traj.states[k])
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path: str | os.PathLike) -> Trajectory:
    """Read a trajectory CSV written by write_trajectory_csv."""
    with open(path) as handle:
        lines = [line.strip() for line in handle if line.strip()]
    if not lines:
        raise ValueError(f"{path}: empty trajectory file")
    header = lines[0].split(",")
    if header[0] != "t":
        raise ValueError(f"{path}: first column must be 't', got {header[0]!r}")
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValueError(f"{path}: row width does not match header")
    return Trajectory(data[:, 0], data[:, 1:], columns=tuple(header[1:]))
