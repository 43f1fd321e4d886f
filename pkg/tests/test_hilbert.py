import math

import numpy as np
import pytest

from pulseprobe import hilbert
from pulseprobe.errors import ConfigError, StateValidationError
from pulseprobe.hilbert import (
    DensityMatrix,
    FieldSpec,
    HilbertLayout,
    annihilation_operator,
    atomic_transition,
    coherent_amplitudes,
    dissipator_apply,
    embed,
    expectation,
    initial_state,
    joint_ket,
    number_operator,
    validate_density_matrix,
)

from conftest import random_density


def basis(dim, k):
    v = np.zeros(dim, dtype=complex)
    v[k] = 1.0
    return v


class TestAnnihilation:
    def test_lowers_one(self):
        a = annihilation_operator(2)
        assert np.allclose(a @ basis(2, 1), basis(2, 0))

    def test_sqrt_factor(self):
        a = annihilation_operator(5)
        assert np.allclose(a @ basis(5, 4), 2.0 * basis(5, 3))

    def test_vacuum_annihilated(self):
        a = annihilation_operator(3)
        assert np.allclose(a @ basis(3, 0), 0.0)

    def test_rejects_zero_dim(self):
        with pytest.raises(ConfigError):
            annihilation_operator(0)


class TestAtomicTransition:
    def test_lowering_from_e(self):
        c = atomic_transition("e", "1")
        expected = np.zeros((3, 3))
        expected[1, 2] = 1.0
        assert np.array_equal(c, expected)

    def test_projector(self):
        p = atomic_transition("1", "1")
        assert np.array_equal(p, np.diag([0.0, 1.0, 0.0]).astype(complex))

    def test_closed_transition_population(self):
        c = atomic_transition("e", "1")
        assert np.allclose(c.conj().T @ c, np.diag([0.0, 0.0, 1.0]))

    def test_unknown_label(self):
        with pytest.raises(ConfigError):
            atomic_transition("e", "g")


class TestEmbed:
    layout = HilbertLayout(2)

    def test_identity(self):
        out = embed(np.eye(2, dtype=complex), "cavity", self.layout)
        assert np.array_equal(out, np.eye(6, dtype=complex))

    def test_kron_structure(self):
        a = annihilation_operator(2)
        out = embed(a, "cavity", self.layout)
        for s in range(3):
            ket1 = np.zeros(6, dtype=complex)
            ket1[1 * 3 + s] = 1.0
            ket0 = np.zeros(6, dtype=complex)
            ket0[0 * 3 + s] = 1.0
            assert np.isclose(ket0 @ out @ ket1, 1.0)

    def test_disjoint_supports_commute(self, rng):
        layout = HilbertLayout(4)
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        ea = embed(a, "cavity", layout)
        eb = embed(b, "atom", layout)
        assert np.allclose(ea @ eb, eb @ ea)

    def test_respects_algebra(self, rng):
        layout = HilbertLayout(4)
        a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        assert np.allclose(embed(a @ b, "cavity", layout), embed(a, "cavity", layout) @ embed(b, "cavity", layout))

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            embed(np.eye(3), "cavity", self.layout)
        with pytest.raises(ConfigError):
            embed(np.eye(2), "atom", self.layout)


class TestDissipator:
    def test_trace_free(self, rng):
        dim = 6
        L = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        rho = random_density(dim, rng)
        assert abs(np.trace(dissipator_apply(L, rho))) < 1e-12

    def test_decay_generator(self):
        c = math.sqrt(0.7) * atomic_transition("e", "1")
        rho_e = np.diag([0.0, 0.0, 1.0]).astype(complex)
        out = dissipator_apply(c, rho_e)
        assert np.allclose(out, 0.7 * (np.diag([0.0, 1.0, 0.0]) - np.diag([0.0, 0.0, 1.0])))

    def test_zero_operator(self, rng):
        rho = random_density(6, rng)
        assert np.array_equal(dissipator_apply(np.zeros((6, 6)), rho), np.zeros((6, 6)))

    def test_preserves_hermiticity(self, rng):
        dim = 9
        L = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        out = dissipator_apply(L, random_density(dim, rng))
        assert np.max(np.abs(out - out.conj().T)) < 1e-12

    def test_shape_mismatch(self, rng):
        with pytest.raises(ConfigError):
            dissipator_apply(np.eye(3), random_density(6, rng))


class TestExpectation:
    def test_identity(self, rng):
        rho = random_density(6, rng)
        assert np.isclose(expectation(np.eye(6), 3.7 * rho), 1.0)

    def test_fock20_photon_number(self):
        layout = HilbertLayout(21)
        rho = initial_state(FieldSpec.fock(20), "1", layout)
        n_op = embed(number_operator(21), "cavity", layout)
        assert np.isclose(expectation(n_op, rho), 20.0)

    def test_hermitian_gives_real(self, rng):
        dim = 6
        h = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        h = h + h.conj().T
        val = expectation(h, random_density(dim, rng))
        assert abs(val.imag) < 1e-10

    def test_projector_in_unit_interval(self, rng):
        dim = 6
        for _ in range(25):
            v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
            v /= np.linalg.norm(v)
            proj = np.outer(v, v.conj())
            val = expectation(proj, random_density(dim, rng)).real
            assert -1e-10 <= val <= 1 + 1e-10

    def test_rejects_zero_trace(self):
        with pytest.raises(StateValidationError):
            expectation(np.eye(3), np.zeros((3, 3)))


class TestInitialState:
    def test_coherent_zero_is_vacuum(self):
        layout = HilbertLayout(5)
        rho_c = initial_state(FieldSpec.coherent(0.0), "0", layout)
        rho_v = initial_state(FieldSpec.fock(0), "0", layout)
        assert np.allclose(rho_c.matrix, rho_v.matrix)

    def test_coherent_mean_photon_number(self):
        layout = HilbertLayout(25)
        rho = initial_state(FieldSpec.coherent(math.sqrt(5)), "1", layout)
        n_op = embed(number_operator(25), "cavity", layout)
        assert abs(expectation(n_op, rho).real - 5.0) < 1e-6

    def test_fock_number_variance_zero(self):
        layout = HilbertLayout(11)
        rho = initial_state(FieldSpec.fock(10), "1", layout)
        n_op = embed(number_operator(11), "cavity", layout)
        mean = expectation(n_op, rho).real
        second = expectation(n_op @ n_op, rho).real
        assert abs(second - mean**2) < 1e-12

    def test_product_structure(self):
        layout = HilbertLayout(4)
        ket = joint_ket(FieldSpec.fock(2), "e", layout)
        assert np.isclose(ket[layout.joint_index(2, "e")], 1.0)
        assert np.isclose(np.linalg.norm(ket), 1.0)

    def test_fock_exceeding_truncation(self):
        with pytest.raises(ConfigError):
            initial_state(FieldSpec.fock(5), "0", HilbertLayout(5))

    def test_coherent_truncation_rejected(self):
        with pytest.raises(ConfigError, match="truncation too small"):
            initial_state(FieldSpec.coherent(math.sqrt(10)), "0", HilbertLayout(12))

    @pytest.mark.parametrize("alpha", [0.5, 1.5, 2.5, math.sqrt(10)])
    def test_truncation_rule_keeps_deficit_small(self, alpha):
        dim = FieldSpec.coherent(alpha).default_cavity_dim()
        _, deficit = coherent_amplitudes(alpha, dim)
        assert deficit < 1e-6

    def test_normalized(self):
        rho = initial_state(FieldSpec.coherent(1.3 + 0.4j), "1", HilbertLayout(20))
        rho.validate(check_positivity=True)


class TestValidation:
    def test_good_state_passes(self, rng):
        validate_density_matrix(random_density(6, rng), normalized=True, check_positivity=True)

    def test_rejects_non_hermitian(self, rng):
        rho = random_density(6, rng)
        rho[0, 1] += 1e-3
        with pytest.raises(StateValidationError, match="Hermiticity"):
            validate_density_matrix(rho)

    def test_rejects_bad_trace(self, rng):
        with pytest.raises(StateValidationError, match="trace"):
            validate_density_matrix(2.0 * random_density(6, rng), normalized=True)

    def test_rejects_negative_eigenvalue(self):
        rho = np.diag([1.1, -0.1, 0.0]).astype(complex)
        with pytest.raises(StateValidationError, match="eigenvalue"):
            validate_density_matrix(rho, normalized=True, check_positivity=True)

    def test_unnormalized_allowed(self, rng):
        validate_density_matrix(42.0 * random_density(6, rng), normalized=False, check_positivity=True)


class TestLayout:
    def test_dimensions(self):
        layout = HilbertLayout(7)
        assert layout.atom_dim == 3
        assert layout.joint_dim == 21

    def test_index_convention(self):
        layout = HilbertLayout(4)
        assert layout.joint_index(2, "e") == 2 * 3 + 2
        assert layout.joint_index(0, 0) == 0

    def test_rejects_empty_cavity(self):
        with pytest.raises(ConfigError):
            HilbertLayout(0)

    def test_density_matrix_wrapper(self, rng):
        dm = DensityMatrix(random_density(6, rng))
        assert np.isclose(dm.trace(), 1.0)
        clone = dm.copy()
        clone.matrix[0, 0] += 1.0
        assert not np.allclose(clone.matrix, dm.matrix)
