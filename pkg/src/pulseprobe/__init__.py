"""Quantum-pulse scattering on a three-level emitter, with continuous
detection, stochastic trajectories, and a Bayesian filter bank for qubit
readout and parameter discrimination."""

from .dynamics import (
    CascadeEngine,
    DetectionSpec,
    Generators,
    ModelConfig,
    apply_jump,
    build_generators,
    counting_nojump_step,
    homodyne_increment,
    homodyne_step,
    jump_probability,
    lindblad_rhs,
    simulate_counting_trajectory,
    simulate_homodyne_trajectory,
    solve_master_equation,
    step_deterministic,
    trajectory_rng,
)
from .ensemble import EnsembleSpec, TruthPolicy, mean_conditioned_state, run_ensemble, run_trajectory
from .errors import (
    AllFiltersDeadError,
    ConfigError,
    IntegrationError,
    PulseProbeError,
    StateValidationError,
)
from .hilbert import (
    DensityMatrix,
    FieldSpec,
    HilbertLayout,
    annihilation_operator,
    atomic_transition,
    dissipator_apply,
    embed,
    expectation,
    initial_state,
)
from .inference import (
    FilterBank,
    Hypothesis,
    error_probability,
    filter_init,
    filter_step_counting,
    filter_step_homodyne,
    posteriors,
    run_filter,
)
from .pulses import CouplingSchedule, PulseShape, TimeGrid, build_coupling_schedule, coupling_g, remaining_norm
from .records import MeasurementRecord

__version__ = "0.1.0"
