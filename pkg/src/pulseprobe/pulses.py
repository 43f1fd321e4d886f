"""Input pulse envelopes and the time-dependent source-cavity coupling.

The travelling pulse u(t) is represented by an analytic or sampled complex
envelope, renormalized so that the trapezoid quadrature of |u|^2 over the
simulation window equals one.  The coupling that makes a one-sided virtual
cavity emit exactly this envelope is

    g(t) = conj(u(t)) / sqrt(1 - int_0^t |u|^2 dt')

which diverges as the cavity empties; g is hard-cut to zero once the
remaining norm drops below ``cutoff_epsilon`` so the residual tail of the
pulse (norm <= epsilon) is abandoned with exact accounting.

All quadrature lives on the integrator grid refined once (spacing dt/2),
which is also where the Runge-Kutta stages evaluate g.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

DEFAULT_CUTOFF_EPSILON = 1e-8
PULSE_NORM_WARN_TOL = 1e-3
# Largest pulse mass allowed to fall outside the simulation window.
WINDOW_MASS_TOL = 1e-3


@dataclass(frozen=True)
class TimeGrid:
    """Uniform step grid on [0, t_final] shared by records, truth, and filters."""

    dt: float
    t_final: float

    def __post_init__(self):
        if self.dt <= 0.0 or self.t_final <= 0.0:
            raise ConfigError(f"dt and t_final must be positive, got dt={self.dt}, t_final={self.t_final}")
        n = self.t_final / self.dt
        if abs(n - round(n)) > 1e-6:
            raise ConfigError(f"t_final={self.t_final} is not an integer number of steps of dt={self.dt}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def half_times(self) -> np.ndarray:
        """Nodes at spacing dt/2: integrator steps plus Runge-Kutta midpoints."""
        return np.arange(2 * self.n_steps + 1) * (0.5 * self.dt)


@dataclass(frozen=True)
class PulseShape:
    """Complex pulse envelope: Gaussian, flat-top, or sampled from data."""

    kind: str
    center: float | None = None
    width: float | None = None
    start: float | None = None
    stop: float | None = None
    sample_times: tuple | None = None
    sample_values: tuple | None = None

    @classmethod
    def gaussian(cls, center: float, width: float) -> "PulseShape":
        """|u|^2 is a normal density with mean ``center`` and std ``width``."""
        if width <= 0.0:
            raise ConfigError(f"gaussian width must be positive, got {width}")
        return cls(kind="gaussian", center=float(center), width=float(width))

    @classmethod
    def flattop(cls, start: float, stop: float) -> "PulseShape":
        if not 0.0 <= start < stop:
            raise ConfigError(f"flattop needs 0 <= start < stop, got [{start}, {stop}]")
        return cls(kind="flattop", start=float(start), stop=float(stop))

    @classmethod
    def sampled(cls, times, values) -> "PulseShape":
        t = np.asarray(times, dtype=float)
        v = np.asarray(values, dtype=complex)
        if t.ndim != 1 or t.size < 2 or t.shape != v.shape:
            raise ConfigError("sampled pulse needs matching 1-d time and value arrays with >= 2 points")
        if np.any(np.diff(t) <= 0.0):
            raise ConfigError("sampled pulse times must be strictly increasing")
        return cls(kind="sampled", sample_times=tuple(t.tolist()), sample_values=tuple(v.tolist()))

    @classmethod
    def from_file(cls, path) -> "PulseShape":
        """Load a sampled pulse from a 2- or 3-column text file (time, real[, imag]).

        Warns when the trapezoid norm of the samples deviates from one by more
        than 1e-3; the envelope is renormalized on the simulation window anyway.
        """
        data = np.loadtxt(path, dtype=float, ndmin=2)
        if data.shape[1] not in (2, 3):
            raise ConfigError(f"pulse file {path} must have 2 or 3 columns, found {data.shape[1]}")
        values = data[:, 1] + (1j * data[:, 2] if data.shape[1] == 3 else 0.0)
        pulse = cls.sampled(data[:, 0], values)
        norm = np.trapezoid(np.abs(values) ** 2, data[:, 0])
        if abs(norm - 1.0) > PULSE_NORM_WARN_TOL:
            warnings.warn(
                f"sampled pulse norm {norm:.6g} deviates from 1 by more than {PULSE_NORM_WARN_TOL}; "
                "it will be renormalized on the simulation window",
                stacklevel=2,
            )
        return pulse

    def amplitude(self, t) -> np.ndarray:
        """Unnormalized envelope values at times t (renormalization happens on the grid)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "gaussian":
            norm = (2.0 * math.pi * self.width**2) ** -0.25
            return (norm * np.exp(-((t - self.center) ** 2) / (4.0 * self.width**2))).astype(complex)
        if self.kind == "flattop":
            height = (self.stop - self.start) ** -0.5
            inside = (t >= self.start) & (t <= self.stop)
            return np.where(inside, height, 0.0).astype(complex)
        st = np.asarray(self.sample_times)
        sv = np.asarray(self.sample_values)
        re = np.interp(t, st, sv.real, left=0.0, right=0.0)
        im = np.interp(t, st, sv.imag, left=0.0, right=0.0)
        return re + 1j * im

    def window_mass_outside(self, t_final: float) -> float:
        """Fraction of |u|^2 falling outside [0, t_final] (analytic where possible)."""
        if self.kind == "gaussian":
            lo = 0.5 * math.erfc(self.center / (math.sqrt(2.0) * self.width))
            hi = 0.5 * math.erfc((t_final - self.center) / (math.sqrt(2.0) * self.width))
            return lo + hi
        if self.kind == "flattop":
            total = self.stop - self.start
            clipped = max(0.0, min(self.stop, t_final) - max(self.start, 0.0))
            return 1.0 - clipped / total
        st = np.asarray(self.sample_times)
        sv = np.abs(np.asarray(self.sample_values)) ** 2
        total = np.trapezoid(sv, st)
        if total <= 0.0:
            return 1.0
        mask = (st >= 0.0) & (st <= t_final)
        if mask.sum() < 2:
            return 1.0
        return 1.0 - float(np.trapezoid(sv[mask], st[mask]) / total)

    def describe(self) -> str:
        if self.kind == "gaussian":
            return f"gaussian(center={self.center}, width={self.width})"
        if self.kind == "flattop":
            return f"flattop(start={self.start}, stop={self.stop})"
        return f"sampled({len(self.sample_times)} points)"


@dataclass(frozen=True)
class CouplingSchedule:
    """Renormalized envelope, remaining norm, and cut-off coupling on the dt/2 grid."""

    grid: TimeGrid
    cutoff_epsilon: float
    envelope: np.ndarray       # renormalized u on the half grid
    remaining: np.ndarray      # 1 - cumulative |u|^2, clipped to [0, 1]
    coupling: np.ndarray       # g on the half grid, zero after cutoff
    cutoff_time: float         # first node where the coupling is forced to zero

    def _interp(self, values: np.ndarray, t) -> np.ndarray:
        half = self.grid.half_times()
        return np.interp(np.asarray(t, dtype=float), half, values, left=values[0], right=values[-1])

    def remaining_norm(self, t) -> np.ndarray:
        """1 - int_0^t |u|^2 via the shared trapezoid quadrature, clamped to [0, 1]."""
        return np.clip(self._interp(self.remaining, t), 0.0, 1.0)

    def coupling_g(self, t) -> np.ndarray:
        """g(t) with the end-of-pulse singularity removed by the epsilon cutoff."""
        re = self._interp(self.coupling.real, t)
        im = self._interp(self.coupling.imag, t)
        out = re + 1j * im
        return np.where(np.asarray(t, dtype=float) >= self.cutoff_time, 0.0 + 0.0j, out)


def build_coupling_schedule(
    pulse: PulseShape, grid: TimeGrid, cutoff_epsilon: float = DEFAULT_CUTOFF_EPSILON
) -> CouplingSchedule:
    if cutoff_epsilon <= 0.0:
        raise ConfigError(f"cutoff_epsilon must be positive, got {cutoff_epsilon}")
    half = grid.half_times()
    u = pulse.amplitude(half)
    w = np.abs(u) ** 2
    h = 0.5 * grid.dt
    cumulative = np.concatenate(([0.0], np.cumsum(0.5 * h * (w[:-1] + w[1:]))))
    total = cumulative[-1]
    if total <= 0.0:
        raise ConfigError("pulse has zero norm on the simulation window")
    u = u / math.sqrt(total)
    remaining = np.clip(1.0 - cumulative / total, 0.0, 1.0)
    alive = remaining > cutoff_epsilon
    g = np.zeros_like(u)
    g[alive] = np.conj(u[alive]) / np.sqrt(remaining[alive])
    dead = np.flatnonzero(~alive)
    cutoff_time = half[dead[0]] if dead.size else math.inf
    return CouplingSchedule(
        grid=grid,
        cutoff_epsilon=cutoff_epsilon,
        envelope=u,
        remaining=remaining,
        coupling=g,
        cutoff_time=float(cutoff_time),
    )


def remaining_norm(pulse: PulseShape, t, grid: TimeGrid) -> np.ndarray:
    """Convenience wrapper building the schedule for one-off evaluations."""
    return build_coupling_schedule(pulse, grid).remaining_norm(t)


def coupling_g(pulse: PulseShape, t, grid: TimeGrid, cutoff_epsilon: float = DEFAULT_CUTOFF_EPSILON) -> np.ndarray:
    return build_coupling_schedule(pulse, grid, cutoff_epsilon).coupling_g(t)
