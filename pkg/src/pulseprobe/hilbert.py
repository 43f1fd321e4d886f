"""Dense operators and states on the joint cavity ⊗ atom Hilbert space.

The joint space is the truncated bosonic mode that carries the travelling
pulse (dimension ``cavity_dim``) tensored with a three-level atom whose
basis is ordered ``(|0>, |1>, |e>)``.  The flat joint index convention is

    joint_index = cavity_index * 3 + atom_index

which is exactly ``numpy.kron(cavity_op, atom_op)`` ordering.  All types
here are immutable after construction except density matrices, which are
owned by exactly one trajectory at a time; the functions are pure and safe
to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, StateValidationError

ATOM_DIM = 3
ATOM_LABELS = ("0", "1", "e")

# Tolerances used by the validators.
HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-8
EIGENVALUE_TOL = 1e-8
COHERENT_DEFICIT_TOL = 1e-6


def atom_index(label) -> int:
    """Map an atomic basis label ('0', '1', 'e'; ints 0/1 accepted) to its index."""
    name = str(label)
    if name not in ATOM_LABELS:
        raise ConfigError(f"unknown atomic level {label!r}; expected one of {ATOM_LABELS}")
    return ATOM_LABELS.index(name)


@dataclass(frozen=True)
class HilbertLayout:
    """Dimensions and index convention of the joint cavity ⊗ atom space."""

    cavity_dim: int
    atom_dim: int = field(default=ATOM_DIM, init=False)

    def __post_init__(self):
        if self.cavity_dim < 1:
            raise ConfigError(f"cavity_dim must be >= 1, got {self.cavity_dim}")

    @property
    def joint_dim(self) -> int:
        return self.cavity_dim * self.atom_dim

    def joint_index(self, cavity_index: int, atom_label) -> int:
        if not 0 <= cavity_index < self.cavity_dim:
            raise ConfigError(f"cavity index {cavity_index} out of range")
        return cavity_index * self.atom_dim + atom_index(atom_label)


def annihilation_operator(cavity_dim: int) -> np.ndarray:
    """Bosonic lowering operator a with <n-1|a|n> = sqrt(n) on the truncated mode."""
    if cavity_dim < 1:
        raise ConfigError(f"cavity_dim must be >= 1, got {cavity_dim}")
    return np.diag(np.sqrt(np.arange(1, cavity_dim, dtype=float)), k=1).astype(complex)


def number_operator(cavity_dim: int) -> np.ndarray:
    return np.diag(np.arange(cavity_dim, dtype=float)).astype(complex)


def atomic_transition(frm, to) -> np.ndarray:
    """The 3x3 operator |to><frm| in the fixed (|0>, |1>, |e>) ordering."""
    op = np.zeros((ATOM_DIM, ATOM_DIM), dtype=complex)
    op[atom_index(to), atom_index(frm)] = 1.0
    return op


def atom_projector(label) -> np.ndarray:
    return atomic_transition(label, label)


def embed(op: np.ndarray, which: str, layout: HilbertLayout) -> np.ndarray:
    """Embed a single-subsystem operator into the joint space (op ⊗ I or I ⊗ op)."""
    op = np.asarray(op, dtype=complex)
    if which == "cavity":
        if op.shape != (layout.cavity_dim, layout.cavity_dim):
            raise ConfigError(f"cavity operator shape {op.shape} does not match cavity_dim {layout.cavity_dim}")
        return np.kron(op, np.eye(ATOM_DIM, dtype=complex))
    if which == "atom":
        if op.shape != (ATOM_DIM, ATOM_DIM):
            raise ConfigError(f"atom operator shape {op.shape} is not {ATOM_DIM}x{ATOM_DIM}")
        return np.kron(np.eye(layout.cavity_dim, dtype=complex), op)
    raise ConfigError(f"subsystem must be 'cavity' or 'atom', got {which!r}")


def _as_matrix(rho) -> np.ndarray:
    return rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)


def dissipator_apply(lindblad_op: np.ndarray, rho) -> np.ndarray:
    """Lindblad dissipator D[L]ρ = LρL† − ½(L†Lρ + ρL†L)."""
    mat = _as_matrix(rho)
    L = np.asarray(lindblad_op, dtype=complex)
    if L.shape != mat.shape:
        raise ConfigError(f"operator shape {L.shape} does not match state shape {mat.shape}")
    LdL = L.conj().T @ L
    return L @ mat @ L.conj().T - 0.5 * (LdL @ mat + mat @ LdL)


def expectation(op: np.ndarray, rho) -> complex:
    """Tr(Aρ)/Tr(ρ): operator average against the normalized state."""
    mat = _as_matrix(rho)
    tr = np.trace(mat)
    if not np.isfinite(tr.real) or tr.real <= 0.0 or abs(tr.imag) > 1e-10 * max(1.0, abs(tr.real)):
        raise StateValidationError(f"state trace {tr} is not strictly positive")
    return complex(np.trace(np.asarray(op) @ mat) / tr.real)


@dataclass(frozen=True)
class FieldSpec:
    """Initial quantum state of the pulse mode: Fock, coherent, or explicit amplitudes."""

    kind: str
    n: int | None = None
    alpha: complex | None = None
    amplitudes: tuple | None = None

    @classmethod
    def fock(cls, n: int) -> "FieldSpec":
        if n < 0:
            raise ConfigError(f"Fock occupation must be >= 0, got {n}")
        return cls(kind="fock", n=int(n))

    @classmethod
    def coherent(cls, alpha) -> "FieldSpec":
        return cls(kind="coherent", alpha=complex(alpha))

    @classmethod
    def vector(cls, amplitudes) -> "FieldSpec":
        amps = np.asarray(amplitudes, dtype=complex)
        if amps.ndim != 1 or amps.size < 1:
            raise ConfigError("amplitude vector must be one-dimensional and non-empty")
        return cls(kind="vector", amplitudes=tuple(amps.tolist()))

    def default_cavity_dim(self) -> int:
        """Truncation rule: Fock needs n+1; coherent keeps the Poisson tail below 1e-6."""
        if self.kind == "fock":
            return self.n + 1
        if self.kind == "coherent":
            a = abs(self.alpha)
            return int(math.ceil(a * a + 6.0 * a)) + 10
        return len(self.amplitudes)

    def describe(self) -> str:
        if self.kind == "fock":
            return f"fock(n={self.n})"
        if self.kind == "coherent":
            return f"coherent(alpha={self.alpha})"
        return f"vector(dim={len(self.amplitudes)})"


def coherent_amplitudes(alpha: complex, cavity_dim: int) -> tuple[np.ndarray, float]:
    """Truncated coherent amplitudes <n|alpha> and the norm deficit before renormalization."""
    amps = np.empty(cavity_dim, dtype=complex)
    amps[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for n in range(1, cavity_dim):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    deficit = 1.0 - float(np.sum(np.abs(amps) ** 2))
    return amps, deficit


def field_ket(spec: FieldSpec, cavity_dim: int) -> np.ndarray:
    """Normalized cavity-mode ket for a field specification; rejects bad truncations."""
    if spec.kind == "fock":
        if spec.n >= cavity_dim:
            raise ConfigError(f"Fock n={spec.n} requires cavity_dim >= {spec.n + 1}, got {cavity_dim}")
        ket = np.zeros(cavity_dim, dtype=complex)
        ket[spec.n] = 1.0
        return ket
    if spec.kind == "coherent":
        amps, deficit = coherent_amplitudes(spec.alpha, cavity_dim)
        if deficit > COHERENT_DEFICIT_TOL:
            raise ConfigError(
                f"coherent truncation too small: norm deficit {deficit:.3e} > {COHERENT_DEFICIT_TOL:.0e} "
                f"at cavity_dim={cavity_dim}; suggested cavity_dim >= {spec.default_cavity_dim()}"
            )
        return amps / math.sqrt(1.0 - deficit)
    amps = np.asarray(spec.amplitudes, dtype=complex)
    if amps.size != cavity_dim:
        raise ConfigError(f"amplitude vector length {amps.size} does not match cavity_dim {cavity_dim}")
    norm = np.linalg.norm(amps)
    if norm == 0.0:
        raise ConfigError("amplitude vector has zero norm")
    return amps / norm


def joint_ket(spec: FieldSpec, atom_label, layout: HilbertLayout) -> np.ndarray:
    """Product ket |field> ⊗ |atom> as a flat vector of length joint_dim."""
    cav = field_ket(spec, layout.cavity_dim)
    atom = np.zeros(ATOM_DIM, dtype=complex)
    atom[atom_index(atom_label)] = 1.0
    return np.kron(cav, atom)


@dataclass
class DensityMatrix:
    """Dense joint-space density matrix; the trace carries likelihood when unnormalized."""

    matrix: np.ndarray
    normalized: bool = True

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.matrix.copy(), self.normalized)

    def validate(self, check_positivity: bool = False) -> None:
        validate_density_matrix(self.matrix, normalized=self.normalized, check_positivity=check_positivity)


def validate_density_matrix(matrix: np.ndarray, normalized: bool = True, check_positivity: bool = False) -> None:
    """Raise StateValidationError on Hermiticity/trace/positivity violations."""
    mat = np.asarray(matrix)
    tr = np.trace(mat)
    scale = max(abs(tr.real), 1e-300)
    herm = float(np.max(np.abs(mat - mat.conj().T)))
    if herm > HERMITICITY_TOL * scale:
        raise StateValidationError(f"Hermiticity deviation {herm:.3e} exceeds {HERMITICITY_TOL:.0e} x trace")
    if not np.isfinite(tr.real) or tr.real < 0.0:
        raise StateValidationError(f"trace {tr} is negative or non-finite")
    if normalized and abs(tr.real - 1.0) > TRACE_TOL:
        raise StateValidationError(f"normalized state has |trace - 1| = {abs(tr.real - 1.0):.3e} > {TRACE_TOL:.0e}")
    if check_positivity:
        min_eig = float(np.linalg.eigvalsh(0.5 * (mat + mat.conj().T)).min())
        if min_eig < -EIGENVALUE_TOL * scale:
            raise StateValidationError(f"minimum eigenvalue {min_eig:.3e} below -{EIGENVALUE_TOL:.0e} x trace")


def initial_state(spec: FieldSpec, atom_label, layout: HilbertLayout) -> DensityMatrix:
    """Pure product state |field><field| ⊗ |atom><atom| on the joint space."""
    ket = joint_ket(spec, atom_label, layout)
    return DensityMatrix(np.outer(ket, ket.conj()), normalized=True)
