import math

import numpy as np
import pytest

from pulseprobe import hilbert
from pulseprobe.dynamics import (
    CascadeEngine,
    DetectionSpec,
    ModelConfig,
    apply_jump,
    build_generators,
    counting_nojump_step,
    dt_guard_report,
    homodyne_increment,
    homodyne_step,
    jump_probability,
    lindblad_rhs,
    simulate_counting_trajectory,
    simulate_homodyne_trajectory,
    solve_master_equation,
    standard_normals,
    step_deterministic,
    trajectory_rng,
)
from pulseprobe.errors import ConfigError, IntegrationError
from pulseprobe.hilbert import FieldSpec, HilbertLayout, atom_projector, embed, joint_ket, number_operator
from pulseprobe.pulses import PulseShape

from conftest import make_config, random_density


def joint_density(field, atom, config):
    ket = joint_ket(field, atom, config.layout)
    return np.outer(ket, ket.conj())


class TestGenerators:
    def test_hermitian_hamiltonian(self):
        cfg = make_config(kappa=0.4, detuning=0.7)
        for t in [0.0, 1.0, 2.0, 3.5, 7.9]:
            gens = build_generators(cfg, t)
            assert np.max(np.abs(gens.hamiltonian - gens.hamiltonian.conj().T)) < 1e-12

    def test_past_cutoff_source_decoupled(self):
        cfg = make_config(detuning=0.5)
        engine = CascadeEngine(cfg)
        t = cfg.t_final - cfg.dt
        assert engine.coupling_at(t) == 0.0
        gens = engine.generators(t)
        pe = embed(atom_projector("e"), "atom", cfg.layout)
        assert np.allclose(gens.hamiltonian, 0.5 * pe)
        c = embed(hilbert.atomic_transition("e", "1"), "atom", cfg.layout)
        assert np.allclose(gens.forward_op, c)

    def test_decoupled_atom_pure_cavity_leak(self):
        cfg = make_config(gamma=0.0)
        engine = CascadeEngine(cfg)
        gens = engine.generators(2.0)
        assert np.max(np.abs(gens.hamiltonian)) == 0.0
        g = engine.coupling_at(2.0)
        a = embed(hilbert.annihilation_operator(cfg.cavity_dim), "cavity", cfg.layout)
        assert np.allclose(gens.forward_op, np.conj(g) * a)

    def test_side_channel_presence(self):
        assert build_generators(make_config(), 1.0).side_ops == ()
        gens = build_generators(make_config(kappa=0.5), 1.0)
        assert len(gens.side_ops) == 1
        c = embed(hilbert.atomic_transition("e", "1"), "atom", make_config(kappa=0.5).layout)
        assert np.allclose(gens.side_ops[0], math.sqrt(0.5) * c)


class TestKernelAgainstDenseReference:
    """The structured fast path must reproduce the dense generator algebra."""

    @pytest.mark.parametrize("kappa,detuning", [(0.0, 0.0), (0.3, 0.0), (0.4, 0.8)])
    def test_drifts_match(self, rng, kappa, detuning):
        cfg = make_config(field=FieldSpec.fock(3), cavity_dim=5, kappa=kappa, detuning=detuning)
        engine = CascadeEngine(cfg)
        d = cfg.layout.joint_dim
        rho = random_density(d, rng)
        rho4 = rho.reshape(cfg.cavity_dim, 3, cfg.cavity_dim, 3)
        for t in [0.0, 1.4, 2.0, 3.1, 7.5]:
            gens = engine.generators(t)
            g = engine.coupling_at(t)
            g2 = abs(g) ** 2
            scale = max(1.0, np.abs(gens.hamiltonian).max())

            dense_full = lindblad_rhs(rho, gens)
            fast_full = engine.kernel.lindblad_drift_mat(rho4, g, g2).reshape(d, d)
            assert np.max(np.abs(dense_full - fast_full)) < 1e-13 * scale

            l0 = gens.forward_op
            ldl = l0.conj().T @ l0
            dense_nojump = -1j * (gens.hamiltonian @ rho - rho @ gens.hamiltonian) - 0.5 * (ldl @ rho + rho @ ldl)
            for op in gens.side_ops:
                dense_nojump += hilbert.dissipator_apply(op, rho)
            fast_nojump = engine.kernel.counting_drift_mat(rho4, g, g2).reshape(d, d)
            assert np.max(np.abs(dense_nojump - fast_nojump)) < 1e-13 * scale

            assert np.max(np.abs(l0 @ rho @ l0.conj().T - engine.kernel.forward_sandwich_mat(rho4, g).reshape(d, d))) < 1e-13
            assert abs(np.trace(ldl @ rho).real - engine.kernel.flux_mat(rho4, g, g2)) < 1e-13
            assert abs(np.trace(l0 @ rho) - engine.kernel.trace_forward_mat(rho4, g)) < 1e-13

    def test_ket_drift_matches_effective_hamiltonian(self, rng):
        cfg = make_config(field=FieldSpec.fock(3), cavity_dim=5, kappa=0.25, detuning=0.3)
        engine = CascadeEngine(cfg)
        d = cfg.layout.joint_dim
        psi = rng.normal(size=d) + 1j * rng.normal(size=d)
        psi /= np.linalg.norm(psi)
        psi2 = psi.reshape(cfg.cavity_dim, 3)
        gens = engine.generators(1.7)
        g = engine.coupling_at(1.7)
        l0 = gens.forward_op
        pe = embed(atom_projector("e"), "atom", cfg.layout)
        m = -1j * gens.hamiltonian - 0.5 * (l0.conj().T @ l0) - 0.5 * cfg.kappa * pe
        assert np.max(np.abs(m @ psi - engine.kernel.drift_ket(psi2, g, abs(g) ** 2).reshape(d))) < 1e-13
        assert np.max(np.abs(l0 @ psi - engine.kernel.forward_ket(psi2, g).reshape(d))) < 1e-13

    def test_measurement_term_matches(self, rng):
        cfg = make_config(field=FieldSpec.fock(2), cavity_dim=4, detection=DetectionSpec("homodyne", phase=0.6))
        engine = CascadeEngine(cfg)
        d = cfg.layout.joint_dim
        rho = random_density(d, rng)
        rho4 = rho.reshape(cfg.cavity_dim, 3, cfg.cavity_dim, 3)
        gens = engine.generators(1.7)
        lphi = np.exp(-0.6j) * gens.forward_op
        dense = lphi @ rho + rho @ lphi.conj().T
        g = engine.coupling_at(1.7)
        fast = engine.kernel.measurement_mat(rho4, g, 0.6).reshape(d, d)
        assert np.max(np.abs(dense - fast)) < 1e-13
        assert abs(np.trace(dense).real - engine.dy_mean_mat(rho4, 850)) < 1e-12  # step 850 -> t = 1.7


class TestLindbladRHS:
    def test_trace_free(self, rng):
        cfg = make_config(kappa=0.3)
        gens = build_generators(cfg, 1.5)
        rho = random_density(cfg.layout.joint_dim, rng)
        assert abs(np.trace(lindblad_rhs(rho, gens))) < 1e-12

    def test_shape_mismatch(self, rng):
        gens = build_generators(make_config(), 1.0)
        with pytest.raises(ConfigError):
            lindblad_rhs(random_density(3, rng), gens)

    def test_atom_decay_limit(self):
        # g = 0 regime: excited population decays at gamma + kappa
        cfg = make_config(field=FieldSpec.fock(0), cavity_dim=2, atom_init="e", kappa=0.5, t_final=6.0)
        result = solve_master_equation(cfg)
        expected = np.exp(-1.5 * result.times)
        # the early-window pulse still couples, but the cavity is empty so only decay acts
        assert np.max(np.abs(result.excited_population - expected)) < 1e-6

    def test_cascaded_cancellation_no_photon_return(self, rng):
        # atom excited, cavity empty: the source mode must gain nothing
        cfg = make_config(field=FieldSpec.fock(0), cavity_dim=4, atom_init="e")
        n_op = embed(number_operator(4), "cavity", cfg.layout)
        rho = joint_density(FieldSpec.fock(0), "e", cfg)
        for t in [0.5, 2.0, 3.0]:
            gens = build_generators(cfg, t)
            dn_dt = np.trace(n_op @ lindblad_rhs(rho, gens)).real
            assert abs(dn_dt) < 1e-14


class TestDeterministicStep:
    def test_dark_state_fixed_point(self):
        cfg = make_config(field=FieldSpec.fock(0), cavity_dim=2, atom_init="0")
        rho = joint_density(FieldSpec.fock(0), "0", cfg)
        out = step_deterministic(rho, cfg, 1.0)
        assert np.max(np.abs(out - rho)) < 1e-15

    def test_trace_preserved_tightly(self, rng):
        cfg = make_config(field=FieldSpec.fock(1), cavity_dim=2)
        rho = random_density(6, rng)
        out = step_deterministic(rho, cfg, 2.0)
        assert abs(np.trace(out).real - 1.0) < 1e-12

    def test_rejects_corrupted_state(self):
        cfg = make_config(field=FieldSpec.fock(4), cavity_dim=5)
        rho = joint_density(FieldSpec.fock(4), "1", cfg)
        rho[0, 0] = np.nan
        with pytest.raises(IntegrationError, match="trace drifted"):
            step_deterministic(rho, cfg, 1.0)

    def test_off_grid_time_rejected(self):
        cfg = make_config()
        rho = joint_density(cfg.field, "1", cfg)
        with pytest.raises(ConfigError):
            step_deterministic(rho, cfg, 0.0007)


class TestCountingPieces:
    def test_nojump_dark_state_invariant(self):
        cfg = make_config(field=FieldSpec.fock(0), cavity_dim=2, atom_init="0")
        rho = joint_density(FieldSpec.fock(0), "0", cfg)
        out = counting_nojump_step(rho, cfg, 1.0)
        assert np.max(np.abs(out - rho)) < 1e-15

    def test_nojump_survival_closed_form(self):
        # excited atom, empty cavity: for kappa = 0 the no-click trace is the
        # survival probability exp(-gamma t); with a side channel the unobserved
        # decay branch keeps its weight, so the trace follows the rate equations
        #   P_e(t) = exp(-(gamma+kappa) t),  P_1(t) = kappa/(gamma+kappa) (1 - P_e)
        for kappa in (0.0, 0.7):
            cfg = make_config(field=FieldSpec.fock(0), cavity_dim=2, atom_init="e", kappa=kappa)
            engine = CascadeEngine(cfg)
            rho = joint_density(FieldSpec.fock(0), "e", cfg).reshape(2, 3, 2, 3)
            traces = [1.0]
            for i in range(500):
                rho = engine.nojump_step_mat(rho, i)
                traces.append(float(engine.kernel.trace_mat(rho)))
            traces = np.asarray(traces)
            assert np.all(np.diff(traces) <= 0.0)
            ts = np.arange(501) * cfg.dt
            total = cfg.gamma + kappa
            pe = np.exp(-total * ts)
            p1 = (kappa / total) * (1.0 - pe) if kappa else 0.0
            assert np.max(np.abs(traces - (pe + p1))) < 1e-9

    def test_jump_probability_examples(self):
        cfg = make_config(field=FieldSpec.fock(1), cavity_dim=2)
        engine = CascadeEngine(cfg)
        t = 2.0
        gens = engine.generators(t)
        g2 = abs(engine.coupling_at(t)) ** 2

        vac = joint_density(FieldSpec.fock(0), "0", cfg)
        assert jump_probability(vac, gens, cfg.dt) == 0.0

        cav1 = joint_density(FieldSpec.fock(1), "1", cfg)
        assert abs(jump_probability(cav1, gens, cfg.dt) - g2 * cfg.dt) < 1e-15

        exc = joint_density(FieldSpec.fock(0), "e", cfg)
        assert abs(jump_probability(exc, gens, cfg.dt) - cfg.gamma * cfg.dt) < 1e-15

    def test_jump_probability_guard(self):
        cfg = make_config(field=FieldSpec.fock(1), cavity_dim=2)
        gens = build_generators(cfg, 2.0)
        exc = joint_density(FieldSpec.fock(0), "e", cfg)
        with pytest.raises(IntegrationError, match="grossly"):
            jump_probability(exc, gens, dt=0.9)

    def test_apply_jump_examples(self):
        cfg = make_config(field=FieldSpec.fock(1), cavity_dim=2)
        engine = CascadeEngine(cfg)
        t = 2.0
        gens = engine.generators(t)
        g2 = abs(engine.coupling_at(t)) ** 2

        cav1 = joint_density(FieldSpec.fock(1), "1", cfg)
        out = apply_jump(cav1, gens)
        expected = g2 * joint_density(FieldSpec.fock(0), "1", cfg)
        assert np.max(np.abs(out - expected)) < 1e-14

        exc = joint_density(FieldSpec.fock(0), "e", cfg)
        out = apply_jump(exc, gens)
        assert np.max(np.abs(out - cfg.gamma * joint_density(FieldSpec.fock(0), "1", cfg))) < 1e-14

    def test_jump_trace_ratio_is_rate(self, rng):
        cfg = make_config(field=FieldSpec.fock(1), cavity_dim=2, kappa=0.2)
        gens = build_generators(cfg, 2.0)
        rho = random_density(6, rng)
        dp = jump_probability(rho, gens, cfg.dt)
        out = apply_jump(rho, gens)
        assert abs(np.trace(out).real - dp / cfg.dt) < 1e-12

    def test_jump_on_dark_state_raises(self):
        cfg = make_config(field=FieldSpec.fock(0), cavity_dim=2, atom_init="0")
        gens = build_generators(cfg, 7.9)  # past cutoff: forward op annihilates everything but |e>
        vac = joint_density(FieldSpec.fock(0), "0", cfg)
        with pytest.raises(IntegrationError, match="impossible"):
            apply_jump(vac, gens)


class TestHomodynePieces:
    def test_increment_statistics_on_vacuum(self):
        cfg = make_config(field=FieldSpec.fock(0), cavity_dim=2, atom_init="0",
                          detection=DetectionSpec("homodyne"))
        gens = build_generators(cfg, 1.0)
        vac = joint_density(FieldSpec.fock(0), "0", cfg)
        rng = trajectory_rng(3, 0)
        samples = np.array([homodyne_increment(vac, gens, cfg.dt, rng) for _ in range(4000)])
        assert abs(samples.mean()) < 4.0 * math.sqrt(cfg.dt / 4000)
        assert abs(samples.var() - cfg.dt) < 5.0 * cfg.dt / math.sqrt(4000)

    def test_increment_mean_tracks_quadrature(self, rng):
        cfg = make_config(field=FieldSpec.fock(1), cavity_dim=2, detection=DetectionSpec("homodyne"))
        gens = build_generators(cfg, 2.0)
        rho = random_density(6, rng)
        mean = np.trace(gens.forward_op @ rho + rho @ gens.forward_op.conj().T).real * cfg.dt
        rr = trajectory_rng(9, 0)
        samples = np.array([homodyne_increment(rho, gens, cfg.dt, rr) for _ in range(4000)])
        assert abs(samples.mean() - mean) < 4.0 * math.sqrt(cfg.dt / 4000)

    def test_vacuum_invariant_under_any_signal(self):
        cfg = make_config(field=FieldSpec.fock(0), cavity_dim=2, atom_init="0",
                          detection=DetectionSpec("homodyne"))
        vac = joint_density(FieldSpec.fock(0), "0", cfg)
        for dy in (-0.3, 0.0, 0.8):
            out = homodyne_step(vac, cfg, 1.0, dy)
            assert np.max(np.abs(out - vac)) < 1e-15

    def test_hermiticity_preserved(self, rng):
        cfg = make_config(field=FieldSpec.fock(2), cavity_dim=3,
                          detection=DetectionSpec("homodyne", phase=0.4), kappa=0.2)
        rho = random_density(9, rng)
        out = homodyne_step(rho, cfg, 2.0, 0.05)
        assert np.max(np.abs(out - out.conj().T)) < 1e-12

    def test_pathological_signal_rejected(self):
        # needs a state with a nonzero quadrature mean for dY to push the trace down
        cfg = make_config(field=FieldSpec.vector([0.0, 1.0, 1.0]), cavity_dim=3,
                          detection=DetectionSpec("homodyne"))
        rho = joint_density(cfg.field, "1", cfg)
        with pytest.raises(IntegrationError):
            homodyne_step(rho, cfg, 2.0, -1e4)


class TestCountingTrajectory:
    def test_vacuum_never_clicks(self):
        cfg = make_config(field=FieldSpec.fock(0), cavity_dim=2, atom_init="0")
        traj = simulate_counting_trajectory(cfg, seed=4)
        assert traj.click_count == 0
        assert np.max(traj.excited_population) == 0.0

    def test_deterministic_given_seed(self):
        cfg = make_config(field=FieldSpec.fock(2), cavity_dim=3)
        a = simulate_counting_trajectory(cfg, seed=11)
        b = simulate_counting_trajectory(cfg, seed=11)
        assert np.array_equal(a.record.click_steps, b.record.click_steps)
        assert np.array_equal(a.excited_population, b.excited_population)

    def test_single_photon_count_conservation(self):
        cfg = make_config(field=FieldSpec.fock(1), cavity_dim=2)
        counts = [simulate_counting_trajectory(cfg, seed=s).click_count for s in range(60)]
        assert max(counts) == 1
        assert np.mean(counts) > 0.95

    def test_mixed_path_matches_pure_path(self):
        # a vanishing side-loss rate forces the density-matrix path; records
        # and conditioned observables must agree with the pure-state path
        pure_cfg = make_config(field=FieldSpec.fock(2), cavity_dim=3)
        mixed_cfg = make_config(field=FieldSpec.fock(2), cavity_dim=3, kappa=1e-13)
        for seed in range(5):
            a = simulate_counting_trajectory(pure_cfg, seed=seed)
            b = simulate_counting_trajectory(mixed_cfg, seed=seed)
            assert np.array_equal(a.record.click_steps, b.record.click_steps)
            assert np.max(np.abs(a.excited_population - b.excited_population)) < 1e-7

    def test_side_loss_reduces_counts(self):
        lossless = make_config(field=FieldSpec.fock(3), cavity_dim=4)
        lossy = make_config(field=FieldSpec.fock(3), cavity_dim=4, kappa=1.0)
        n0 = np.mean([simulate_counting_trajectory(lossless, s).click_count for s in range(40)])
        n1 = np.mean([simulate_counting_trajectory(lossy, s).click_count for s in range(40)])
        assert n1 < n0 - 0.3

    def test_flux_integral_matches_master_equation_mean(self):
        cfg = make_config(field=FieldSpec.fock(1), cavity_dim=2)
        me = solve_master_equation(cfg)
        mean_acc = np.mean([simulate_counting_trajectory(cfg, s).flux_integral[-1] for s in range(80)])
        assert abs(mean_acc - me.flux_integral[-1]) < 0.12

    def test_state_checkpoints_are_normalized(self):
        cfg = make_config(field=FieldSpec.fock(2), cavity_dim=3)
        traj = simulate_counting_trajectory(cfg, seed=2, state_times=[1.0, 4.0])
        assert traj.states.shape == (2, 9, 9)
        for rho in traj.states:
            assert abs(np.trace(rho).real - 1.0) < 1e-10

    def test_scheme_mismatch(self):
        cfg = make_config(detection=DetectionSpec("homodyne"))
        with pytest.raises(ConfigError):
            simulate_counting_trajectory(cfg, 0)


class TestHomodyneTrajectory:
    def test_deterministic_given_seed(self, homodyne_config):
        a = simulate_homodyne_trajectory(homodyne_config, seed=3)
        b = simulate_homodyne_trajectory(homodyne_config, seed=3)
        assert np.array_equal(a.record.increments, b.record.increments)

    def test_photons_leave_cavity(self, homodyne_config):
        traj = simulate_homodyne_trajectory(homodyne_config, seed=1)
        assert traj.cavity_photons[0] == pytest.approx(2.0, abs=1e-9)
        assert traj.cavity_photons[-1] < 1e-6

    def test_record_shape(self, homodyne_config):
        traj = simulate_homodyne_trajectory(homodyne_config, seed=1)
        assert traj.record.increments.shape == (homodyne_config.grid.n_steps,)
        assert traj.record.scheme == "homodyne"


class TestMasterEquation:
    def test_trace_drift_tiny(self):
        cfg = make_config(field=FieldSpec.fock(2), cavity_dim=3, kappa=0.3)
        result = solve_master_equation(cfg)
        assert result.max_trace_drift < 1e-10

    def test_validation_checkpoints(self):
        cfg = make_config(field=FieldSpec.fock(2), cavity_dim=3, validate_every=500)
        result = solve_master_equation(cfg)
        assert result.validation.checks > 0
        assert result.validation.max_hermiticity_defect < 1e-10
        assert result.validation.min_eigenvalue_ratio > -1e-8

    def test_photon_number_starts_right(self):
        cfg = make_config(field=FieldSpec.fock(2), cavity_dim=3)
        result = solve_master_equation(cfg)
        assert result.cavity_photons[0] == pytest.approx(2.0, abs=1e-12)

    def test_guard_report_flags_large_dt(self):
        cfg = make_config(field=FieldSpec.fock(10), cavity_dim=11, dt=0.1)
        report = dt_guard_report(cfg)
        assert not report["ok"]
        assert report["suggested_dt"] < 0.1

    def test_guard_report_accepts_fine_dt(self):
        report = dt_guard_report(make_config(field=FieldSpec.fock(1), cavity_dim=2))
        assert report["ok"]


class TestRng:
    def test_streams_independent_and_reproducible(self):
        a = trajectory_rng(42, 0).random(5)
        b = trajectory_rng(42, 0).random(5)
        c = trajectory_rng(42, 1).random(5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_normals_have_unit_variance(self):
        x = standard_normals(trajectory_rng(7, 0), 20000)
        assert abs(x.mean()) < 0.03
        assert abs(x.var() - 1.0) < 0.03
