"""Cascaded source-cavity + emitter dynamics with continuous detection.

Implements the deterministic master equation for the joint virtual-cavity /
three-level-atom state, and its two measurement unravelings:

* photon counting: a no-click drift for the unnormalized state plus
  occasional click updates rho -> L0 rho L0^+ sampled with probability
  <L0^+ L0> dt per step;
* homodyne detection: a noisy signal increment dY with Wiener noise, fed
  into a linear stochastic update (L0 rho + rho L0^+) dY on top of the
  deterministic drift.

Time stepping is classical fixed-step fourth-order Runge-Kutta for all
drifts, with generators evaluated on the dt/2 stage grid shared with the
pulse quadrature; the homodyne measurement term is Euler-Maruyama, applied
after the drift substep.  Truth states are renormalized every step; filters
keep the trace as a likelihood (see :mod:`pulseprobe.inference`).

A trajectory owns its state and is strictly sequential; distinct
trajectories share only immutable configuration and can run concurrently.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from . import hilbert
from .errors import ConfigError, IntegrationError, StateValidationError
from .hilbert import ATOM_LABELS, FieldSpec, HilbertLayout, atom_index
from .kernels import CascadeKernel
from .pulses import (
    DEFAULT_CUTOFF_EPSILON,
    WINDOW_MASS_TOL,
    CouplingSchedule,
    PulseShape,
    TimeGrid,
    build_coupling_schedule,
)
from .records import MeasurementRecord

# Per-step jump probability guard: warn above the soft bound, fail above the hard one.
JUMP_PROB_WARN = 0.1
JUMP_PROB_MAX = 0.5
TRACE_DRIFT_REJECT = 1e-6


@dataclass(frozen=True)
class DetectionSpec:
    """Detection scheme applied to the forward output field."""

    scheme: str = "counting"
    phase: float = 0.0  # homodyne local-oscillator phase, L0 -> L0 exp(-i phase)

    def __post_init__(self):
        if self.scheme not in ("counting", "homodyne"):
            raise ConfigError(f"detection scheme must be 'counting' or 'homodyne', got {self.scheme!r}")


@dataclass(frozen=True)
class ModelConfig:
    """Physical parameters, input state, grid, and detection for one model."""

    pulse: PulseShape
    field: FieldSpec
    atom_init: str = "1"
    gamma: float = 1.0
    kappa: float = 0.0
    detuning: float = 0.0
    cavity_dim: int | None = None
    dt: float = 1e-3
    t_final: float = 10.0
    detection: DetectionSpec = DetectionSpec()
    cutoff_epsilon: float = DEFAULT_CUTOFF_EPSILON
    validate_every: int = 0

    def __post_init__(self):
        if self.gamma < 0.0 or self.kappa < 0.0:
            raise ConfigError(f"rates must be non-negative, got gamma={self.gamma}, kappa={self.kappa}")
        object.__setattr__(self, "atom_init", str(self.atom_init))
        atom_index(self.atom_init)
        if self.cavity_dim is None:
            object.__setattr__(self, "cavity_dim", self.field.default_cavity_dim())
        TimeGrid(self.dt, self.t_final)  # validates dt/t_final consistency
        mass_out = self.pulse.window_mass_outside(self.t_final)
        if mass_out > WINDOW_MASS_TOL:
            raise ConfigError(
                f"pulse leaves {mass_out:.3e} of its norm outside the window [0, {self.t_final}] "
                f"(allowed {WINDOW_MASS_TOL}); widen the window or move the pulse"
            )
        hilbert.field_ket(self.field, self.cavity_dim)  # validates truncation
        if self.validate_every < 0:
            raise ConfigError("validate_every must be >= 0")

    @property
    def layout(self) -> HilbertLayout:
        return HilbertLayout(self.cavity_dim)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.dt, self.t_final)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Generators:
    """Dense generators at one instant: H(t), the monitored forward operator
    L0(t) = conj(g) a + sqrt(gamma) |1><e|, and unmonitored side channels."""

    time: float
    hamiltonian: np.ndarray
    forward_op: np.ndarray
    side_ops: tuple


def _counting_pure_state_ok(config: ModelConfig) -> bool:
    """Click-conditioned states stay pure iff nothing populates the side channel."""
    return config.kappa == 0.0 or config.atom_init == "0"


class CascadeEngine:
    """Precomputed coupling schedule plus stepping kernels for one config."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.grid = config.grid
        self.dt = config.dt
        self.n_steps = self.grid.n_steps
        self.schedule: CouplingSchedule = build_coupling_schedule(
            config.pulse, self.grid, config.cutoff_epsilon
        )
        self.kernel = CascadeKernel(config.cavity_dim, config.gamma, config.kappa, config.detuning)
        self.g_half = self.schedule.coupling.copy()
        self.g2_half = np.abs(self.g_half) ** 2
        self.phase = config.detection.phase

    # ------------------------------------------------------------ generators

    def coupling_at(self, t: float) -> complex:
        return complex(self.schedule.coupling_g(t))

    def generators(self, t: float) -> Generators:
        cfg = self.config
        layout = cfg.layout
        g = self.coupling_at(t)
        a = hilbert.embed(hilbert.annihilation_operator(cfg.cavity_dim), "cavity", layout)
        c = hilbert.embed(hilbert.atomic_transition("e", "1"), "atom", layout)
        pe = hilbert.embed(hilbert.atom_projector("e"), "atom", layout)
        absorb = a.conj().T @ c  # (a^+ x c) in the joint space
        h = 1j * (math.sqrt(cfg.gamma) / 2.0) * (g * absorb - np.conj(g) * absorb.conj().T)
        h += cfg.detuning * pe
        forward = np.conj(g) * a + math.sqrt(cfg.gamma) * c
        side = (math.sqrt(cfg.kappa) * c,) if cfg.kappa > 0.0 else ()
        return Generators(time=float(t), hamiltonian=h, forward_op=forward, side_ops=side)

    # --------------------------------------------------------------- helpers

    def _stages(self, i: int):
        k = 2 * i
        return (
            (self.g_half[k], self.g2_half[k]),
            (self.g_half[k + 1], self.g2_half[k + 1]),
            (self.g_half[k + 2], self.g2_half[k + 2]),
        )

    def _rk4(self, state: np.ndarray, i: int, drift) -> np.ndarray:
        (g0, q0), (gm, qm), (g1, q1) = self._stages(i)
        dt = self.dt
        k1 = drift(state, g0, q0)
        k2 = drift(state + (0.5 * dt) * k1, gm, qm)
        k3 = drift(state + (0.5 * dt) * k2, gm, qm)
        k4 = drift(state + dt * k3, g1, q1)
        return state + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)

    # -------------------------------------------------------------- ket path

    def nojump_step_ket(self, psi: np.ndarray, i: int) -> np.ndarray:
        return self._rk4(psi, i, self.kernel.drift_ket)

    def forward_ket(self, psi: np.ndarray, i: int) -> np.ndarray:
        return self.kernel.forward_ket(psi, self.g_half[2 * i])

    def flux_ket(self, psi: np.ndarray, i: int) -> np.ndarray:
        return self.kernel.flux_ket(psi, self.g_half[2 * i])

    # ----------------------------------------------------------- matrix path

    def deterministic_step_mat(self, rho: np.ndarray, i: int) -> np.ndarray:
        return self._rk4(rho, i, self.kernel.lindblad_drift_mat)

    def nojump_step_mat(self, rho: np.ndarray, i: int) -> np.ndarray:
        return self._rk4(rho, i, self.kernel.counting_drift_mat)

    def jump_mat(self, rho: np.ndarray, i: int) -> np.ndarray:
        return self.kernel.forward_sandwich_mat(rho, self.g_half[2 * i])

    def homodyne_step_mat(self, rho: np.ndarray, i: int, dy) -> np.ndarray:
        """Drift substep, then the measurement substep with L0 evaluated at step start."""
        drifted = self._rk4(rho, i, self.kernel.lindblad_drift_mat)
        meas = self.kernel.measurement_mat(drifted, self.g_half[2 * i], self.phase)
        dy = np.asarray(dy, dtype=float)
        if dy.ndim:
            dy = dy[..., None, None, None, None]
        return drifted + dy * meas

    def dy_mean_mat(self, rho: np.ndarray, i: int) -> np.ndarray:
        """Tr(L rho + rho L^+) for L = exp(-i phase) L0 and normalized rho."""
        z = self.kernel.trace_forward_mat(rho, self.g_half[2 * i])
        return 2.0 * (np.exp(-1j * self.phase) * z).real

    def flux_mat(self, rho: np.ndarray, i: int) -> np.ndarray:
        k = 2 * i
        return self.kernel.flux_mat(rho, self.g_half[k], self.g2_half[k])


def make_engine(model) -> CascadeEngine:
    return model if isinstance(model, CascadeEngine) else CascadeEngine(model)


def _step_index(engine: CascadeEngine, t: float) -> int:
    i = t / engine.dt
    k = int(round(i))
    if abs(i - k) > 1e-6 or not 0 <= k < engine.n_steps:
        raise ConfigError(f"time {t} is not a grid step start in [0, {engine.config.t_final})")
    return k


# --------------------------------------------------------------------- RNG

def trajectory_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent Philox stream derived from (master seed, trajectory index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), int(index)))))


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Gaussian samples via the inverse CDF of centered 53-bit uniforms."""
    u = (rng.integers(0, 1 << 53, size=shape, dtype=np.uint64) + 0.5) * 2.0**-53
    return ndtri(u)


# ------------------------------------------------------- public operations

def _as_matrix(rho) -> np.ndarray:
    return np.asarray(rho.matrix if isinstance(rho, hilbert.DensityMatrix) else rho, dtype=complex)


def _to_kernel_layout(mat: np.ndarray, engine: CascadeEngine) -> np.ndarray:
    nc = engine.config.cavity_dim
    if mat.shape != (nc * 3, nc * 3):
        raise ConfigError(f"state shape {mat.shape} does not match joint dimension {nc * 3}")
    return mat.reshape(nc, 3, nc, 3)


def build_generators(model, t: float) -> Generators:
    return make_engine(model).generators(t)


def lindblad_rhs(rho, gens: Generators) -> np.ndarray:
    """Dense reference evaluation of the full master-equation right-hand side."""
    mat = _as_matrix(rho)
    if mat.shape != gens.hamiltonian.shape:
        raise ConfigError(f"state shape {mat.shape} does not match generators {gens.hamiltonian.shape}")
    out = -1j * (gens.hamiltonian @ mat - mat @ gens.hamiltonian)
    out += hilbert.dissipator_apply(gens.forward_op, mat)
    for op in gens.side_ops:
        out += hilbert.dissipator_apply(op, mat)
    return out


def step_deterministic(rho, model, t: float) -> np.ndarray:
    """One Runge-Kutta step of the deterministic master equation."""
    engine = make_engine(model)
    mat = _as_matrix(rho)
    shaped = _to_kernel_layout(mat, engine)
    out = engine.deterministic_step_mat(shaped, _step_index(engine, t)).reshape(mat.shape)
    drift = abs(float(np.trace(out).real) - float(np.trace(mat).real))
    if not np.isfinite(drift) or drift > TRACE_DRIFT_REJECT * max(1.0, abs(float(np.trace(mat).real))):
        raise IntegrationError(
            f"trace drifted by {drift:.3e} in one step at t={t}; dt={engine.dt} is too large for this model"
        )
    return out


def counting_nojump_step(rho, model, t: float) -> np.ndarray:
    """One no-click step of the unnormalized counting filter equation."""
    engine = make_engine(model)
    mat = _as_matrix(rho)
    shaped = _to_kernel_layout(mat, engine)
    out = engine.nojump_step_mat(shaped, _step_index(engine, t)).reshape(mat.shape)
    if float(np.trace(out).real) < 0.0:
        raise IntegrationError(f"no-click step produced a negative trace at t={t}; reduce dt")
    return out


def jump_probability(rho, gens: Generators, dt: float) -> float:
    """delta_p = <L0^+ L0> dt against the normalized state."""
    mat = _as_matrix(rho)
    ldl = gens.forward_op.conj().T @ gens.forward_op
    p = float(hilbert.expectation(ldl, mat).real) * dt
    if p > JUMP_PROB_MAX:
        raise IntegrationError(f"jump probability {p:.3g} exceeds {JUMP_PROB_MAX}; dt is grossly too large")
    return p


def apply_jump(rho, gens: Generators) -> np.ndarray:
    """Click update L0 rho L0^+ (unnormalized; the trace ratio is the likelihood)."""
    mat = _as_matrix(rho)
    out = gens.forward_op @ mat @ gens.forward_op.conj().T
    if float(np.trace(out).real) == 0.0:
        raise IntegrationError(
            "click applied to a state the forward channel annihilates: "
            "impossible event for this hypothesis (likelihood 0)"
        )
    return out


def homodyne_increment(rho, gens: Generators, dt: float, rng: np.random.Generator, phase: float = 0.0) -> float:
    """dY = Tr(L rho + rho L^+) dt + sqrt(dt) N(0,1), with L = exp(-i phase) L0."""
    mat = _as_matrix(rho)
    lphi = np.exp(-1j * phase) * gens.forward_op
    mean = float(np.trace(lphi @ mat + mat @ lphi.conj().T).real)
    return mean * dt + math.sqrt(dt) * float(standard_normals(rng, ()))


def homodyne_step(rho, model, t: float, dy: float) -> np.ndarray:
    """One step of the unnormalized homodyne filter equation driven by dY."""
    engine = make_engine(model)
    mat = _as_matrix(rho)
    shaped = _to_kernel_layout(mat, engine)
    out = engine.homodyne_step_mat(shaped, _step_index(engine, t), float(dy)).reshape(mat.shape)
    if float(np.trace(out).real) <= 0.0:
        raise IntegrationError(f"homodyne step produced a non-positive trace at t={t}")
    return out


# ------------------------------------------------------------- trajectories

@dataclass
class ValidationStats:
    """Worst-case diagnostics collected at validation checkpoints."""

    max_trace_drift: float = 0.0
    max_hermiticity_defect: float = 0.0
    min_eigenvalue_ratio: float = 0.0   # min eigenvalue / trace, most negative seen
    checks: int = 0

    def update_mat(self, rho: np.ndarray, kernel: CascadeKernel) -> None:
        tr = float(np.atleast_1d(kernel.trace_mat(rho)).min())
        herm = float(np.atleast_1d(kernel.hermiticity_defect_mat(rho)).max())
        eig = float(np.atleast_1d(kernel.min_eigenvalue_mat(rho)).min())
        self.max_hermiticity_defect = max(self.max_hermiticity_defect, herm / max(tr, 1e-300))
        self.min_eigenvalue_ratio = min(self.min_eigenvalue_ratio, eig / max(tr, 1e-300))
        self.checks += 1


@dataclass
class CountingTrajectory:
    record: MeasurementRecord
    times: np.ndarray
    cavity_photons: np.ndarray
    excited_population: np.ndarray
    flux_integral: np.ndarray      # cumulative sum of <L0^+ L0> dt along the trajectory
    click_count: int
    states: np.ndarray | None = None
    state_times: np.ndarray | None = None
    validation: ValidationStats | None = None


@dataclass
class HomodyneTrajectory:
    record: MeasurementRecord
    times: np.ndarray
    cavity_photons: np.ndarray
    excited_population: np.ndarray
    states: np.ndarray | None = None
    state_times: np.ndarray | None = None
    validation: ValidationStats | None = None


@dataclass
class MasterEquationResult:
    times: np.ndarray
    cavity_photons: np.ndarray
    excited_population: np.ndarray
    flux: np.ndarray               # <L0^+ L0> on the grid
    flux_integral: np.ndarray      # trapezoid cumulative integral of the flux
    max_step_probability: float    # max over the run of flux * dt
    max_trace_drift: float
    states: np.ndarray | None = None
    state_times: np.ndarray | None = None
    validation: ValidationStats | None = None


def _state_indices(grid: TimeGrid, state_times) -> np.ndarray:
    if state_times is None:
        return np.empty(0, dtype=np.int64)
    idx = np.asarray(np.round(np.asarray(state_times, dtype=float) / grid.dt), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() > grid.n_steps):
        raise ConfigError("state checkpoint times fall outside the grid")
    return idx


def _warn_step_probability(p_max: float, dt: float) -> None:
    if p_max > JUMP_PROB_WARN:
        warnings.warn(
            f"max per-step detection probability {p_max:.3g} exceeds {JUMP_PROB_WARN}; "
            f"suggested dt <= {JUMP_PROB_WARN * dt / p_max:.3e}",
            stacklevel=3,
        )


def solve_master_equation(config: ModelConfig, state_times=None) -> MasterEquationResult:
    """Integrate the deterministic master equation, tracking observables."""
    engine = make_engine(config)
    kern = engine.kernel
    n = engine.n_steps
    rho = hilbert.initial_state(config.field, config.atom_init, config.layout).matrix
    rho = rho.reshape(config.cavity_dim, 3, config.cavity_dim, 3)
    nph = np.empty(n + 1)
    pe = np.empty(n + 1)
    flux = np.empty(n + 1)
    keep = _state_indices(engine.grid, state_times)
    states = np.empty((keep.size, config.cavity_dim * 3, config.cavity_dim * 3), dtype=complex) if keep.size else None
    stats = ValidationStats() if config.validate_every else None
    max_drift = 0.0

    def observe(i: int) -> None:
        nph[i] = kern.photons_mat(rho)
        pe[i] = kern.excited_mat(rho)
        flux[i] = engine.flux_mat(rho, i)
        if states is not None:
            for slot in np.flatnonzero(keep == i):
                states[slot] = rho.reshape(states.shape[1:])
        if stats is not None and (i % config.validate_every == 0 or i == n):
            stats.update_mat(rho, kern)

    observe(0)
    for i in range(n):
        tr_before = kern.trace_mat(rho)
        rho = engine.deterministic_step_mat(rho, i)
        drift = abs(float(kern.trace_mat(rho)) - float(tr_before))
        max_drift = max(max_drift, drift)
        if drift > TRACE_DRIFT_REJECT:
            raise IntegrationError(f"trace drifted by {drift:.3e} at step {i}; dt={config.dt} too large")
        observe(i + 1)

    flux_integral = np.concatenate(([0.0], np.cumsum(0.5 * config.dt * (flux[:-1] + flux[1:]))))
    p_max = float(flux.max() * config.dt)
    _warn_step_probability(p_max, config.dt)
    return MasterEquationResult(
        times=engine.grid.times(),
        cavity_photons=nph,
        excited_population=pe,
        flux=flux,
        flux_integral=flux_integral,
        max_step_probability=p_max,
        max_trace_drift=max_drift,
        states=states,
        state_times=np.asarray(state_times, dtype=float) if state_times is not None else None,
        validation=stats,
    )


def simulate_counting_trajectory(config: ModelConfig, seed: int, state_times=None) -> CountingTrajectory:
    """Generate one photon-counting record and the click-conditioned state evolution.

    The conditional state is evolved exactly as the filter equations prescribe
    (conditioning on clicks only); it is kept as a pure state when the side
    channel cannot mix it, and as a density matrix otherwise.
    """
    if config.detection.scheme != "counting":
        raise ConfigError("config.detection.scheme must be 'counting'")
    engine = make_engine(config)
    kern = engine.kernel
    n = engine.n_steps
    dt = engine.dt
    rng = trajectory_rng(seed, 0)
    uniforms = rng.random((n, 2))

    pure = _counting_pure_state_ok(config)
    ket = hilbert.joint_ket(config.field, config.atom_init, config.layout).reshape(config.cavity_dim, 3)
    state = ket if pure else np.einsum("ns,mt->nsmt", ket, ket.conj())

    nph = np.empty(n + 1)
    pe = np.empty(n + 1)
    flux_int = np.empty(n + 1)
    clicks: list[int] = []
    keep = _state_indices(engine.grid, state_times)
    dim = config.cavity_dim * 3
    states = np.empty((keep.size, dim, dim), dtype=complex) if keep.size else None
    stats = ValidationStats() if (config.validate_every and not pure) else None
    p_seen = 0.0
    acc = 0.0

    def snapshot(i: int) -> None:
        if pure:
            nph[i] = kern.photons_ket(state)
            pe[i] = kern.excited_ket(state)
        else:
            nph[i] = kern.photons_mat(state)
            pe[i] = kern.excited_mat(state)
        flux_int[i] = acc
        if states is not None:
            for slot in np.flatnonzero(keep == i):
                if pure:
                    flat = state.reshape(dim)
                    states[slot] = np.outer(flat, flat.conj())
                else:
                    states[slot] = state.reshape(dim, dim)
        if stats is not None and (i % config.validate_every == 0 or i == n):
            stats.update_mat(state, kern)

    snapshot(0)
    for i in range(n):
        rate = float(engine.flux_ket(state, i) if pure else engine.flux_mat(state, i))
        dp = rate * dt
        p_seen = max(p_seen, dp)
        if dp > JUMP_PROB_MAX:
            raise IntegrationError(f"jump probability {dp:.3g} exceeds {JUMP_PROB_MAX} at step {i}; reduce dt")
        acc += dp
        if uniforms[i, 0] < dp:
            clicks.append(i)
            state = engine.forward_ket(state, i) if pure else engine.jump_mat(state, i)
        else:
            state = engine.nojump_step_ket(state, i) if pure else engine.nojump_step_mat(state, i)
        tr = float(kern.norm_sq_ket(state) if pure else kern.trace_mat(state))
        if tr <= 0.0:
            raise IntegrationError(f"state trace collapsed to {tr} at step {i}")
        state = state / (math.sqrt(tr) if pure else tr)
        snapshot(i + 1)

    _warn_step_probability(p_seen, dt)
    record = MeasurementRecord(
        scheme="counting",
        dt=dt,
        t_final=config.t_final,
        n_steps=n,
        seed=int(seed),
        stream_index=0,
        click_steps=np.asarray(clicks, dtype=np.int64),
    )
    return CountingTrajectory(
        record=record,
        times=engine.grid.times(),
        cavity_photons=nph,
        excited_population=pe,
        flux_integral=flux_int,
        click_count=len(clicks),
        states=states,
        state_times=np.asarray(state_times, dtype=float) if state_times is not None else None,
        validation=stats,
    )


def simulate_homodyne_trajectory(config: ModelConfig, seed: int, state_times=None) -> HomodyneTrajectory:
    """Generate one homodyne record and the signal-conditioned state evolution."""
    if config.detection.scheme != "homodyne":
        raise ConfigError("config.detection.scheme must be 'homodyne'")
    engine = make_engine(config)
    kern = engine.kernel
    n = engine.n_steps
    dt = engine.dt
    rng = trajectory_rng(seed, 0)
    noise = standard_normals(rng, n)

    ket = hilbert.joint_ket(config.field, config.atom_init, config.layout).reshape(config.cavity_dim, 3)
    rho = np.einsum("ns,mt->nsmt", ket, ket.conj())
    nph = np.empty(n + 1)
    pe = np.empty(n + 1)
    increments = np.empty(n)
    keep = _state_indices(engine.grid, state_times)
    dim = config.cavity_dim * 3
    states = np.empty((keep.size, dim, dim), dtype=complex) if keep.size else None
    stats = ValidationStats() if config.validate_every else None
    p_seen = 0.0

    def snapshot(i: int) -> None:
        nph[i] = kern.photons_mat(rho)
        pe[i] = kern.excited_mat(rho)
        if states is not None:
            for slot in np.flatnonzero(keep == i):
                states[slot] = rho.reshape(dim, dim)
        if stats is not None and (i % config.validate_every == 0 or i == n):
            stats.update_mat(rho, kern)

    snapshot(0)
    sqdt = math.sqrt(dt)
    for i in range(n):
        p_seen = max(p_seen, float(engine.flux_mat(rho, i)) * dt)
        dy = float(engine.dy_mean_mat(rho, i)) * dt + sqdt * float(noise[i])
        increments[i] = dy
        rho = engine.homodyne_step_mat(rho, i, dy)
        tr = float(kern.trace_mat(rho))
        if tr <= 0.0:
            raise IntegrationError(f"homodyne step produced trace {tr} at step {i}; reduce dt")
        rho = rho / tr
        snapshot(i + 1)

    _warn_step_probability(p_seen, dt)
    record = MeasurementRecord(
        scheme="homodyne",
        dt=dt,
        t_final=config.t_final,
        n_steps=n,
        seed=int(seed),
        stream_index=0,
        phase=config.detection.phase,
        increments=increments,
    )
    return HomodyneTrajectory(
        record=record,
        times=engine.grid.times(),
        cavity_photons=nph,
        excited_population=pe,
        states=states,
        state_times=np.asarray(state_times, dtype=float) if state_times is not None else None,
        validation=stats,
    )


def dt_guard_report(config: ModelConfig) -> dict:
    """Deterministic dry run checking the per-step detection probability bound.

    Returns the maximum of <L0^+ L0> dt over the run and, when the soft bound
    is violated, a suggested dt that restores it.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        result = solve_master_equation(config)
    p_max = result.max_step_probability
    report = {"max_step_probability": p_max, "bound": JUMP_PROB_WARN, "ok": p_max <= JUMP_PROB_WARN}
    if not report["ok"]:
        report["suggested_dt"] = JUMP_PROB_WARN * config.dt / p_max
    return report
